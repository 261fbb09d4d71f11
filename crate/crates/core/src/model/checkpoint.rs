use std::fmt::Write as _;
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::graph::NoiseSchedule;
use crate::scalar::Real;

use super::{EdpGnn, ModelConfig};

pub const CHECKPOINT_HEADER: &str = "EDPGNN-CKPT v1";

/// Self-describing snapshot of a trained score network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub schedule: NoiseSchedule,
    /// Node counts of the training set, used for size sampling.
    pub node_sizes: Vec<usize>,
    pub params: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn from_model<R: Real>(model: &EdpGnn<R>, schedule: &NoiseSchedule, node_sizes: Vec<usize>) -> Self {
        let store = model.params();
        let params = store
            .ids()
            .map(|id| (store.name(id).to_string(), store.value(id).cast()))
            .collect();
        Self {
            config: model.config().clone(),
            schedule: schedule.clone(),
            node_sizes,
            params,
        }
    }

    /// Errors name the first architecture field that differs from `expected`.
    pub fn check_architecture(&self, expected: &ModelConfig) -> Result<()> {
        for ((name, got), (_, want)) in arch_fields(&self.config).into_iter().zip(arch_fields(expected)) {
            if got != want {
                return Err(Error::Checkpoint(format!(
                    "architecture mismatch: model.{name} is {got} in checkpoint, {want} in config"
                )));
            }
        }
        Ok(())
    }

    /// Rebuilds the network, checking every parameter name and shape.
    pub fn to_model<R: Real>(&self) -> Result<EdpGnn<R>> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = EdpGnn::<R>::new(self.config.clone(), &mut rng)?;
        let store = model.params_mut();
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                store.len(),
                self.params.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if store.value(id).shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    store.value(id).shape()
                )));
            }
            store.set_value(id, value.cast())?;
        }
        Ok(model)
    }
}

fn arch_fields(c: &ModelConfig) -> [(&'static str, usize); 8] {
    [
        ("layers", c.layers),
        ("mp_steps", c.mp_steps),
        ("channels", c.channels),
        ("hidden", c.hidden),
        ("node_features", c.node_features),
        ("levels", c.levels),
        ("learnable_adj", c.learnable_adj as usize),
        ("multi_channel", c.multi_channel as usize),
    ]
}

pub fn format_checkpoint(ckpt: &Checkpoint) -> String {
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    for (name, value) in arch_fields(&ckpt.config) {
        let _ = writeln!(out, "arch {name} {value}");
    }
    let _ = write!(out, "sigmas {}", ckpt.schedule.len());
    for s in ckpt.schedule.sigmas() {
        let _ = write!(out, " {s:.16e}");
    }
    out.push('\n');
    let _ = write!(out, "nodes {}", ckpt.node_sizes.len());
    for n in &ckpt.node_sizes {
        let _ = write!(out, " {n}");
    }
    out.push('\n');
    for (name, value) in &ckpt.params {
        let _ = write!(out, "param {name} {}", value.rank());
        for d in value.shape() {
            let _ = write!(out, " {d}");
        }
        for v in value.data() {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
    }
    out
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| bad(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| bad(line, format!("invalid {what} {tok:?}")))
}

fn counted<T: std::str::FromStr>(toks: &mut std::str::SplitWhitespace<'_>, line: usize, what: &str) -> Result<Vec<T>> {
    let count: usize = num(toks.next(), line, "count")?;
    let values = (0..count).map(|_| num(toks.next(), line, what)).collect::<Result<Vec<T>>>()?;
    if toks.next().is_some() {
        return Err(bad(line, "trailing tokens"));
    }
    Ok(values)
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim_end() == CHECKPOINT_HEADER => {}
        _ => return Err(Error::Checkpoint(format!("missing header {CHECKPOINT_HEADER:?}"))),
    }
    let mut arch = Vec::new();
    let mut sigmas = None;
    let mut nodes = Vec::new();
    let mut params = Vec::new();
    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            None => continue,
            Some("arch") => {
                let name = toks.next().ok_or_else(|| bad(ln, "missing field name"))?;
                let value: usize = num(toks.next(), ln, name)?;
                arch.push((name.to_string(), value));
            }
            Some("sigmas") => sigmas = Some(counted::<f64>(&mut toks, ln, "sigma")?),
            Some("nodes") => nodes = counted::<usize>(&mut toks, ln, "node count")?,
            Some("param") => {
                let name = toks.next().ok_or_else(|| bad(ln, "missing parameter name"))?;
                let rank: usize = num(toks.next(), ln, "rank")?;
                let shape = (0..rank).map(|_| num(toks.next(), ln, "extent")).collect::<Result<Vec<usize>>>()?;
                let data = toks.map(|t| num(Some(t), ln, "value")).collect::<Result<Vec<f64>>>()?;
                let value = Tensor::new(shape, data).map_err(|e| bad(ln, e))?;
                params.push((name.to_string(), value));
            }
            Some(other) => return Err(bad(ln, format!("unknown record {other:?}"))),
        }
    }
    let mut config = ModelConfig::default();
    let expected = arch_fields(&config);
    if arch.len() != expected.len() {
        return Err(Error::Checkpoint(format!("expected {} arch records, found {}", expected.len(), arch.len())));
    }
    for (name, value) in arch {
        let flag = value != 0;
        match name.as_str() {
            "layers" => config.layers = value,
            "mp_steps" => config.mp_steps = value,
            "channels" => config.channels = value,
            "hidden" => config.hidden = value,
            "node_features" => config.node_features = value,
            "levels" => config.levels = value,
            "learnable_adj" => config.learnable_adj = flag,
            "multi_channel" => config.multi_channel = flag,
            _ => return Err(Error::Checkpoint(format!("unknown arch field {name}"))),
        }
    }
    config.validate()?;
    let sigmas = sigmas.ok_or_else(|| Error::Checkpoint("missing sigmas record".into()))?;
    let schedule = NoiseSchedule::new(sigmas)?;
    if schedule.len() != config.levels {
        return Err(Error::Checkpoint(format!(
            "{} noise levels but model.levels is {}",
            schedule.len(),
            config.levels
        )));
    }
    Ok(Checkpoint {
        config,
        schedule,
        node_sizes: nodes,
        params,
    })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            layers: 1,
            mp_steps: 2,
            channels: 2,
            hidden: 3,
            levels: 2,
            ..ModelConfig::default()
        }
    }

    fn ckpt() -> Checkpoint {
        let model = EdpGnn::<f64>::new(tiny(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let schedule = NoiseSchedule::new(vec![0.7, 0.1]).unwrap();
        Checkpoint::from_model(&model, &schedule, vec![4, 6])
    }

    #[test]
    fn lossless_round_trip() {
        let c = ckpt();
        let text = format_checkpoint(&c);
        let back = parse_checkpoint(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(format_checkpoint(&back), text);
        let model: EdpGnn<f64> = back.to_model().unwrap();
        assert_eq!(model.params().flatten(), EdpGnn::<f64>::new(tiny(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap().params().flatten());
    }

    #[test]
    fn corrupted_header() {
        let text = format_checkpoint(&ckpt()).replacen("v1", "v9", 1);
        assert!(matches!(parse_checkpoint(&text), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn mismatch_names_field() {
        let other = ModelConfig { hidden: 4, ..tiny() };
        let err = ckpt().check_architecture(&other).unwrap_err().to_string();
        assert!(err.contains("model.hidden"), "{err}");
        ckpt().check_architecture(&tiny()).unwrap();
    }
}
