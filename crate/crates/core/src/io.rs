//! File output helpers and serde adapters shared by reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Error;

/// Write `bytes` to `path` via a temporary sibling and a rename, so readers
/// never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err)
}

/// Serialize non-finite floats as strings (`"inf"`, `"-inf"`, `"nan"`) so that
/// JSON round trips are lossless.
pub mod float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("expected a number, got `{other}`"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| to_repr(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }

    /// String-keyed maps of scalars.
    pub mod map {
        use super::*;
        use std::collections::BTreeMap;

        pub fn serialize<S: Serializer>(v: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
            s.collect_map(v.iter().map(|(k, x)| (k, to_repr(*x))))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
            BTreeMap::<String, Repr>::deserialize(d)?
                .into_iter()
                .map(|(k, r)| from_repr(r).map(|v| (k, v)))
                .collect()
        }
    }

    /// String-keyed maps of series.
    pub mod map_vec {
        use super::*;
        use std::collections::BTreeMap;

        pub fn serialize<S: Serializer>(v: &BTreeMap<String, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
            s.collect_map(
                v.iter()
                    .map(|(k, xs)| (k, xs.iter().map(|x| to_repr(*x)).collect::<Vec<_>>())),
            )
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<f64>>, D::Error> {
            BTreeMap::<String, Vec<Repr>>::deserialize(d)?
                .into_iter()
                .map(|(k, rs)| rs.into_iter().map(from_repr).collect::<Result<Vec<_>, _>>().map(|v| (k, v)))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Serialize, Deserialize)]
    struct Wrap {
        #[serde(with = "float")]
        a: f64,
        #[serde(with = "float::vec")]
        b: Vec<f64>,
    }

    #[test]
    fn non_finite_round_trip() {
        let w = Wrap {
            a: f64::INFINITY,
            b: vec![1.5, f64::NEG_INFINITY, f64::NAN],
        };
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"a":"inf","b":[1.5,"-inf","nan"]}"#);
        let back: Wrap = serde_json::from_str(&s).unwrap();
        assert_eq!(back.a, f64::INFINITY);
        assert_eq!(back.b[1], f64::NEG_INFINITY);
        assert!(back.b[2].is_nan());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("spinshelve-io-{}", std::process::id()));
        let path = dir.join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        let leftovers = fs::read_dir(&dir).unwrap().count();
        assert_eq!(leftovers, 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
