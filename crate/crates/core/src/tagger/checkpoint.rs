//! `CSTAG1` checkpoint format, little-endian:
//!
//! ```text
//! "CSTAG1"
//! arch   : str kind, str init, u64 embedding_dim, u64 hidden, f64 dropout,
//!          u8 fine_tune
//! vocab  : u64 n, then n x (str word, u64 count)
//! heads  : u32 n, then per head: str task ("pos" | "lid"), u32 m, m x str label
//! params : u32 n, then per parameter: str name, matrix block
//! backoff: u8 present, then u64 byte length and a CSEMB1 model
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ArchKind, EmbeddingInit, HeadLabels, TaggerArch, TaggerError, TaggerModel};
use crate::corpus::{Lid, Upos, Vocabulary};
use crate::embed::EmbeddingTable;
use crate::io::{publish_atomically, BinReader, BinWriter};
use crate::nn::{Matrix, SequenceModel};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"CSTAG1";

fn init_str(i: EmbeddingInit) -> &'static str {
    match i {
        EmbeddingInit::Random => "random",
        EmbeddingInit::Pretrained => "pretrained",
    }
}

fn bad(e: impl std::fmt::Display) -> TaggerError {
    TaggerError::Format(e.to_string())
}

impl TaggerModel {
    pub fn write_binary<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = BinWriter::new(out);
        w.bytes(CHECKPOINT_MAGIC)?;
        w.str(self.arch.kind.as_str())?;
        w.str(init_str(self.arch.init))?;
        w.u64(self.arch.embedding_dim as u64)?;
        w.u64(self.arch.hidden as u64)?;
        w.f64(self.arch.dropout)?;
        w.u8(self.arch.fine_tune as u8)?;

        w.u64(self.vocab.len() as u64)?;
        for (word, &count) in self.vocab.words().iter().zip(self.vocab.counts()) {
            w.str(word)?;
            w.u64(count)?;
        }

        w.u32(self.heads.len() as u32)?;
        for h in &self.heads {
            match h {
                HeadLabels::Pos(v) => {
                    w.str("pos")?;
                    w.u32(v.len() as u32)?;
                    for u in v {
                        w.str(u.as_str())?;
                    }
                }
                HeadLabels::Lid(v) => {
                    w.str("lid")?;
                    w.u32(v.len() as u32)?;
                    for l in v {
                        w.str(l.as_str())?;
                    }
                }
            }
        }

        let params = self.network.parameters();
        w.u32(params.len() as u32)?;
        for p in params {
            w.str(&p.name)?;
            let (r, c) = p.value.shape();
            w.matrix_f32(r, c, p.value.data().iter().map(|&x| x as f32))?;
        }

        match &self.backoff {
            Some(t) => {
                let mut buf = Vec::new();
                t.write_binary(&mut buf)?;
                w.u8(1)?;
                w.u64(buf.len() as u64)?;
                w.bytes(&buf)?;
            }
            None => w.u8(0)?,
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<TaggerModel, TaggerError> {
        let mut r = BinReader::new(input);
        r.expect_magic(CHECKPOINT_MAGIC).map_err(bad)?;
        let kind: ArchKind = r.str().map_err(bad)?.parse()?;
        let init = match r.str().map_err(bad)?.as_str() {
            "random" => EmbeddingInit::Random,
            "pretrained" => EmbeddingInit::Pretrained,
            other => return Err(bad(format!("unknown init {other:?}"))),
        };
        let arch = TaggerArch {
            kind,
            init,
            embedding_dim: r.u64().map_err(bad)? as usize,
            hidden: r.u64().map_err(bad)? as usize,
            dropout: r.f64().map_err(bad)?,
            fine_tune: r.u8().map_err(bad)? != 0,
        };
        arch.validate().map_err(bad)?;

        let n = r.u64().map_err(bad)? as usize;
        let mut words = Vec::with_capacity(n.min(1 << 20));
        let mut counts = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            words.push(r.str().map_err(bad)?);
            counts.push(r.u64().map_err(bad)?);
        }
        let vocab = Vocabulary::from_parts(words, counts);

        let nh = r.u32().map_err(bad)?;
        let mut heads = Vec::new();
        for _ in 0..nh {
            let task = r.str().map_err(bad)?;
            let m = r.u32().map_err(bad)?;
            let labels: Vec<String> = (0..m).map(|_| r.str()).collect::<Result<_, _>>().map_err(bad)?;
            heads.push(match task.as_str() {
                "pos" => HeadLabels::Pos(
                    labels
                        .iter()
                        .map(|l| l.parse::<Upos>())
                        .collect::<Result<_, _>>()
                        .map_err(bad)?,
                ),
                "lid" => HeadLabels::Lid(
                    labels
                        .iter()
                        .map(|l| l.parse::<Lid>())
                        .collect::<Result<_, _>>()
                        .map_err(bad)?,
                ),
                other => return Err(bad(format!("unknown head task {other:?}"))),
            });
        }

        let sizes: Vec<usize> = heads.iter().map(HeadLabels::len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut network = SequenceModel::new(
            Matrix::zeros(vocab.len(), arch.embedding_dim),
            arch.hidden,
            &sizes,
            arch.dropout,
            &mut rng,
        )
        .map_err(bad)?;
        network.embedding.frozen = !arch.fine_tune;
        let np = r.u32().map_err(bad)? as usize;
        let mut params = network.parameters_mut();
        if np != params.len() {
            return Err(bad(format!("expected {} parameters, found {np}", params.len())));
        }
        for p in params.iter_mut() {
            let name = r.str().map_err(bad)?;
            if name != p.name {
                return Err(bad(format!("expected parameter {:?}, found {name:?}", p.name)));
            }
            let (rows, cols, data) = r.matrix_f32().map_err(bad)?;
            if (rows, cols) != p.value.shape() {
                return Err(bad(format!("parameter {name} has shape {rows}x{cols}")));
            }
            p.value = Matrix::from_vec(rows, cols, data.into_iter().map(f64::from).collect());
        }

        let backoff = match r.u8().map_err(bad)? {
            0 => None,
            1 => {
                let len = r.u64().map_err(bad)? as usize;
                let buf = r.bytes(len).map_err(bad)?;
                Some(EmbeddingTable::read_binary(&buf[..]).map_err(bad)?)
            }
            other => return Err(bad(format!("bad backoff flag {other}"))),
        };
        Ok(TaggerModel {
            arch,
            vocab,
            heads,
            network,
            backoff,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TaggerError> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        publish_atomically(path, &buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TaggerModel, TaggerError> {
        TaggerModel::read_binary(io::BufReader::new(fs::File::open(path)?))
    }
}
