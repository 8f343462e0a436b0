//! Versioned text checkpoint for network parameters. Floats are written as
//! hex-encoded IEEE-754 bits so a load round-trip is bit-exact.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Layout, NetworkConfig, QNetworkParams};

const MAGIC: &str = "patrol-checkpoint v1";

fn write_vec(out: &mut impl Write, name: &str, v: &[f64]) -> Result<()> {
    writeln!(out, "{name} {}", v.len())?;
    for chunk in v.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|x| format!("{:016x}", x.to_bits())).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn save_checkpoint(params: &QNetworkParams, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let cfg = &params.config;
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "channels {}", cfg.in_channels)?;
    writeln!(out, "height {}", cfg.in_height)?;
    writeln!(out, "width {}", cfg.in_width)?;
    writeln!(
        out,
        "conv {}",
        cfg.conv_filters.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ")
    )?;
    writeln!(
        out,
        "fc {}",
        cfg.fc_widths.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ")
    )?;
    writeln!(out, "head {}", cfg.head_width)?;
    writeln!(out, "noisy {}", cfg.noisy as u8)?;
    writeln!(out, "step {}", params.step)?;
    write_vec(&mut out, "data", &params.data)?;
    write_vec(&mut out, "adam_m", &params.adam_m)?;
    write_vec(&mut out, "adam_v", &params.adam_v)?;
    writeln!(out, "end")?;
    Ok(())
}

struct Reader<R: BufRead> {
    lines: std::io::Lines<R>,
}

impl<R: BufRead> Reader<R> {
    fn next_line(&mut self) -> Result<String> {
        self.lines
            .next()
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?
            .map_err(Error::Io)
    }

    fn field(&mut self, name: &str) -> Result<String> {
        let line = self.next_line()?;
        line.strip_prefix(name)
            .map(|v| v.trim().to_string())
            .ok_or_else(|| Error::Checkpoint(format!("expected field {name:?}, got {line:?}")))
    }

    fn usize_field(&mut self, name: &str) -> Result<usize> {
        self.field(name)?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad {name}: {e}")))
    }

    fn list_field(&mut self, name: &str) -> Result<Vec<usize>> {
        let raw = self.field(name)?;
        raw.split_whitespace()
            .map(|v| v.parse().map_err(|e| Error::Checkpoint(format!("bad {name}: {e}"))))
            .collect()
    }

    fn vec_field(&mut self, name: &str) -> Result<Vec<f64>> {
        let len = self.usize_field(name)?;
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let line = self.next_line()?;
            for token in line.split_whitespace() {
                let bits = u64::from_str_radix(token, 16)
                    .map_err(|e| Error::Checkpoint(format!("bad float bits: {e}")))?;
                out.push(f64::from_bits(bits));
            }
        }
        if out.len() != len {
            return Err(Error::Checkpoint(format!(
                "{name}: got {} values, expected {len}",
                out.len()
            )));
        }
        Ok(out)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<QNetworkParams> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        lines: BufReader::new(file).lines(),
    };
    let magic = r.next_line()?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic line {magic:?}")));
    }
    let config = NetworkConfig {
        in_channels: r.usize_field("channels")?,
        in_height: r.usize_field("height")?,
        in_width: r.usize_field("width")?,
        conv_filters: r.list_field("conv")?,
        fc_widths: r.list_field("fc")?,
        head_width: r.usize_field("head")?,
        noisy: r.usize_field("noisy")? != 0,
    };
    let step: u64 = r
        .field("step")?
        .parse()
        .map_err(|e| Error::Checkpoint(format!("bad step: {e}")))?;
    let layout = Layout::new(&config);
    let data = r.vec_field("data")?;
    let adam_m = r.vec_field("adam_m")?;
    let adam_v = r.vec_field("adam_v")?;
    if data.len() != layout.param_len {
        return Err(Error::Checkpoint(format!(
            "parameter count {} does not match architecture ({})",
            data.len(),
            layout.param_len
        )));
    }
    if r.next_line()? != "end" {
        return Err(Error::Checkpoint("missing end marker".into()));
    }
    Ok(QNetworkParams {
        config,
        layout,
        data,
        adam_m,
        adam_v,
        step,
    })
}
