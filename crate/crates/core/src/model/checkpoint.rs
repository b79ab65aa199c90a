//! Checkpoint files.
//!
//! ```json
//! {"format_version": 1, "kind": "nca", "hidden": 16,
//!  "w1": [...], "b1": [...], "w2": [...], "b2": 0.0,
//!  "train_seed": 0, "train_config": {...}}
//! ```
//!
//! `w1` is nested `hidden × 2 × 3 × 3` for the NCA and `hidden × 2` for the
//! MLP. Every weight is written with 17 significant digits so a reload
//! reproduces the exact doubles.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde_json::Value;

use super::{MlpModel, ModelKind, NcaModel, RuleNet};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

/// A model of either kind, as loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Nca(NcaModel),
    Mlp(MlpModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Nca(_) => ModelKind::Nca,
            AnyModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            AnyModel::Nca(m) => m.param_count(),
            AnyModel::Mlp(m) => m.param_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub train_seed: Option<u64>,
    pub train_config: Value,
}

fn number(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_list(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&number(*x));
    }
    out.push(']');
}

/// Serialize a model to checkpoint JSON.
pub fn to_json<M: RuleNet>(model: &M, train_seed: Option<u64>, train_config: &Value) -> String {
    let h = model.hidden();
    let k = model.kernel_size();
    let patch = 2 * k * k;
    let p = model.params();
    let w1_len = h * patch;
    let (w1, rest) = p.split_at(w1_len);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h);

    let mut out = String::new();
    let _ = write!(
        out,
        "{{\n  \"format_version\": {FORMAT_VERSION},\n  \"kind\": \"{}\",\n  \"hidden\": {h},\n  \"w1\": [",
        model.kind().as_str()
    );
    for (o, unit) in w1.chunks(patch).enumerate() {
        if o > 0 {
            out.push(',');
        }
        out.push_str("\n    ");
        if k == 1 {
            write_list(&mut out, unit);
        } else {
            out.push('[');
            for (c, chan) in unit.chunks(k * k).enumerate() {
                if c > 0 {
                    out.push(',');
                }
                out.push('[');
                for (r, row) in chan.chunks(k).enumerate() {
                    if r > 0 {
                        out.push(',');
                    }
                    write_list(&mut out, row);
                }
                out.push(']');
            }
            out.push(']');
        }
    }
    out.push_str("\n  ],\n  \"b1\": ");
    write_list(&mut out, b1);
    out.push_str(",\n  \"w2\": ");
    write_list(&mut out, w2);
    let _ = write!(out, ",\n  \"b2\": {},\n  \"train_seed\": ", number(b2[0]));
    match train_seed {
        Some(s) => {
            let _ = write!(out, "{s}");
        }
        None => out.push_str("null"),
    }
    let _ = write!(
        out,
        ",\n  \"train_config\": {}\n}}\n",
        serde_json::to_string(train_config).expect("json value serializes")
    );
    out
}

fn flatten(v: &Value, out: &mut Vec<f64>) -> Result<()> {
    match v {
        Value::Array(xs) => xs.iter().try_for_each(|x| flatten(x, out)),
        Value::Number(n) => {
            out.push(
                n.as_f64()
                    .ok_or_else(|| Error::Checkpoint(format!("bad number {n}")))?,
            );
            Ok(())
        }
        other => Err(Error::Checkpoint(format!("expected number, got {other}"))),
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing field {key:?}")))
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Checkpoint("top level must be an object".into()))?;
    let version = field(obj, "format_version")?.as_u64();
    if version != Some(FORMAT_VERSION) {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {:?}",
            field(obj, "format_version")?
        )));
    }
    let kind: ModelKind = serde_json::from_value(field(obj, "kind")?.clone())
        .map_err(|e| Error::Checkpoint(format!("bad kind: {e}")))?;
    let hidden = field(obj, "hidden")?
        .as_u64()
        .filter(|&h| h >= 1)
        .ok_or_else(|| Error::Checkpoint("hidden must be a positive integer".into()))?
        as usize;

    let mut params = Vec::new();
    let k = kind.kernel_size();
    let mut w1 = Vec::new();
    flatten(field(obj, "w1")?, &mut w1)?;
    if w1.len() != hidden * 2 * k * k {
        return Err(Error::Checkpoint(format!(
            "w1 has {} entries, expected {}",
            w1.len(),
            hidden * 2 * k * k
        )));
    }
    params.extend(w1);
    for key in ["b1", "w2"] {
        let mut xs = Vec::new();
        flatten(field(obj, key)?, &mut xs)?;
        if xs.len() != hidden {
            return Err(Error::Checkpoint(format!("{key} must have {hidden} entries")));
        }
        params.extend(xs);
    }
    params.push(
        field(obj, "b2")?
            .as_f64()
            .ok_or_else(|| Error::Checkpoint("b2 must be a number".into()))?,
    );

    let model = match kind {
        ModelKind::Nca => AnyModel::Nca(NcaModel::from_params(hidden, params)?),
        ModelKind::Mlp => AnyModel::Mlp(MlpModel::from_params(hidden, params)?),
    };
    let train_seed = obj.get("train_seed").and_then(Value::as_u64);
    let train_config = obj.get("train_config").cloned().unwrap_or(Value::Null);
    Ok(Checkpoint {
        model,
        train_seed,
        train_config,
    })
}

/// Write `contents` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save<M: RuleNet>(path: &Path, model: &M, train_seed: Option<u64>, train_config: &Value) -> Result<()> {
    write_atomic(path, to_json(model, train_seed, train_config).as_bytes())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn nca_round_trip_is_bit_exact() {
        let m = NcaModel::init(16, &mut seeded(3));
        let cfg = serde_json::json!({"total_steps": 10});
        let text = to_json(&m, Some(3), &cfg);
        let ck = from_json(&text).unwrap();
        assert_eq!(ck.model, AnyModel::Nca(m.clone()));
        assert_eq!(ck.train_seed, Some(3));
        assert_eq!(ck.train_config, cfg);
        assert_eq!(ck.model.param_count(), 321);
        // Re-serialising gives identical bytes.
        if let AnyModel::Nca(m2) = ck.model {
            assert_eq!(to_json(&m2, Some(3), &cfg), text);
        }
    }

    #[test]
    fn mlp_round_trip() {
        let m = MlpModel::init(32, &mut seeded(5));
        let text = to_json(&m, None, &Value::Null);
        let ck = from_json(&text).unwrap();
        assert_eq!(ck.model, AnyModel::Mlp(m));
        assert_eq!(ck.model.kind(), ModelKind::Mlp);
        assert_eq!(ck.train_seed, None);
    }

    #[test]
    fn nested_shape() {
        let m = NcaModel::init(4, &mut seeded(1));
        let v: Value = serde_json::from_str(&to_json(&m, None, &Value::Null)).unwrap();
        let w1 = v["w1"].as_array().unwrap();
        assert_eq!(w1.len(), 4);
        assert_eq!(w1[0].as_array().unwrap().len(), 2);
        assert_eq!(w1[0][0].as_array().unwrap().len(), 3);
        assert_eq!(w1[0][0][0].as_array().unwrap().len(), 3);
        assert_eq!(v["w1"][1][0][2][1].as_f64().unwrap(), m.w1()[18 + 7]);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        assert!(from_json("{").is_err());
        assert!(from_json("[]").is_err());
        let m = NcaModel::init(4, &mut seeded(1));
        let good = to_json(&m, None, &Value::Null);
        assert!(from_json(&good.replace("\"hidden\": 4", "\"hidden\": 5")).is_err());
        assert!(from_json(&good.replace("\"format_version\": 1", "\"format_version\": 9")).is_err());
        assert!(from_json(&good.replace("\"nca\"", "\"rnn\"")).is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = NcaModel::init(8, &mut seeded(2));
        save(&path, &m, Some(2), &Value::Null).unwrap();
        assert_eq!(load(&path).unwrap().model, AnyModel::Nca(m));
        assert!(load(&dir.path().join("missing.json")).is_err());
    }

    proptest! {
        #[test]
        fn any_finite_weight_survives(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let mut m = MlpModel::zeros(1);
            m.params_mut()[0] = x;
            let ck = from_json(&to_json(&m, None, &Value::Null)).unwrap();
            match ck.model {
                AnyModel::Mlp(back) => prop_assert_eq!(back.params()[0].to_bits(), x.to_bits()),
                _ => prop_assert!(false),
            }
        }
    }
}
