//! Text encoding of datasets.
//!
//! ```text
//! i2m2-dataset v1, C=<int>, d1=<int>, d2=<int>, kind=<categorical|gaussian>, seed=<u64>, spec=<hex digest>
//! y, x..., x'...
//! ```
//!
//! For categorical data `d1`/`d2` are symbol support sizes and each modality
//! contributes one symbol index per line; for gaussian data they are feature
//! dimensions. Reals use Rust's shortest round-trip formatting, so decoding
//! reproduces every value bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::sampling::{Dataset, Sample};
use super::spec::{ModalityShape, Observation};
use crate::error::{Error, Result};

const MAGIC: &str = "i2m2-dataset v1";

pub fn encode_dataset(dataset: &Dataset) -> String {
    let (s1, s2) = dataset.shapes();
    let kind = if s1.is_categorical() { "categorical" } else { "gaussian" };
    let mut out = format!(
        "{MAGIC}, C={}, d1={}, d2={}, kind={kind}, seed={}, spec={}\n",
        dataset.num_classes(),
        s1.size(),
        s2.size(),
        dataset.seed(),
        dataset.spec_digest()
    );
    for s in dataset.samples() {
        let mut fields = vec![s.y.to_string()];
        for obs in [&s.x, &s.x_prime] {
            match obs {
                Observation::Symbol(v) => fields.push(v.to_string()),
                Observation::Vector(v) => fields.extend(v.iter().map(|x| x.to_string())),
            }
        }
        let _ = writeln!(out, "{}", fields.join(", "));
    }
    out
}

fn header_field<'a>(fields: &'a [&'a str], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find_map(|f| f.trim().strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("header is missing `{key}=`"),
        })
}

fn parse_header_number<T: std::str::FromStr>(fields: &[&str], key: &str) -> Result<T> {
    let raw = header_field(fields, key)?;
    raw.parse().map_err(|_| Error::Parse {
        line: 1,
        message: format!("`{key}` has invalid value `{raw}`"),
    })
}

pub fn decode_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty input".into(),
    })?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.first().map(|f| f.trim()) != Some(MAGIC) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected `{MAGIC}` header"),
        });
    }
    let num_classes: usize = parse_header_number(&fields, "C")?;
    let d1: usize = parse_header_number(&fields, "d1")?;
    let d2: usize = parse_header_number(&fields, "d2")?;
    let seed: u64 = parse_header_number(&fields, "seed")?;
    let digest = header_field(&fields, "spec")?.to_string();
    let shapes = match header_field(&fields, "kind")? {
        "categorical" => (ModalityShape::Symbols(d1), ModalityShape::Symbols(d2)),
        "gaussian" => (ModalityShape::Vector(d1), ModalityShape::Vector(d2)),
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unknown kind `{other}`"),
            })
        }
    };
    let (w1, w2) = match shapes.0 {
        ModalityShape::Symbols(_) => (1, 1),
        ModalityShape::Vector(_) => (d1, d2),
    };

    let mut samples = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 1 + w1 + w2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", 1 + w1 + w2, parts.len()),
            });
        }
        let bad = |what: &str, raw: &str| Error::Parse {
            line: line_no,
            message: format!("invalid {what} `{raw}`"),
        };
        let y: usize = parts[0].parse().map_err(|_| bad("label", parts[0]))?;
        let parse_obs = |chunk: &[&str]| -> Result<Observation> {
            if shapes.0.is_categorical() {
                chunk[0]
                    .parse()
                    .map(Observation::Symbol)
                    .map_err(|_| bad("symbol", chunk[0]))
            } else {
                chunk
                    .iter()
                    .map(|r| {
                        r.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| bad("real", r))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Observation::Vector)
            }
        };
        let x = parse_obs(&parts[1..1 + w1])?;
        let x_prime = parse_obs(&parts[1 + w1..])?;
        samples.push(Sample { x, x_prime, y });
    }
    Dataset::new(samples, num_classes, shapes, digest, seed)
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(dataset)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{discrete_d1, preset, sample_dataset};
    use crate::nncore::RngStream;
    use proptest::prelude::*;

    #[test]
    fn categorical_round_trip() {
        let data = sample_dataset(&discrete_d1().unwrap(), 200, &mut RngStream::new(4)).unwrap();
        let text = encode_dataset(&data);
        assert!(text.starts_with("i2m2-dataset v1, C=2, d1=2, d2=2, kind=categorical, seed=4, spec="));
        assert_eq!(decode_dataset(&text).unwrap(), data);
    }

    #[test]
    fn gaussian_round_trip_is_exact() {
        let data = sample_dataset(&preset("both-deps").unwrap(), 100, &mut RngStream::new(8)).unwrap();
        assert_eq!(decode_dataset(&encode_dataset(&data)).unwrap(), data);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        let data = sample_dataset(&discrete_d1().unwrap(), 20, &mut RngStream::new(1)).unwrap();
        write_dataset(&data, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
        assert!(matches!(read_dataset(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn malformed_inputs_name_the_line() {
        let header = "i2m2-dataset v1, C=2, d1=2, d2=2, kind=categorical, seed=0, spec=ab\n";
        assert!(matches!(decode_dataset(""), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(decode_dataset("nope\n"), Err(Error::Parse { line: 1, .. })));
        let text = format!("{header}0, 1, 0\n1, 1\n");
        assert!(matches!(decode_dataset(&text), Err(Error::Parse { line: 3, .. })));
        let text = format!("{header}0, x, 0\n");
        assert!(matches!(decode_dataset(&text), Err(Error::Parse { line: 2, .. })));
        let text = "i2m2-dataset v1, C=2, d1=1, d2=1, kind=gaussian, seed=0, spec=ab\n0, NaN, 1\n";
        assert!(matches!(decode_dataset(text), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn arbitrary_reals_round_trip(
            rows in prop::collection::vec(
                (0usize..3, prop::collection::vec(-1e300f64..1e300, 3), prop::collection::vec(-1e-300f64..1e-300, 2)),
                1..20,
            ),
            seed in any::<u64>(),
        ) {
            let samples = rows
                .into_iter()
                .map(|(y, x, xp)| Sample { x: Observation::Vector(x), x_prime: Observation::Vector(xp), y })
                .collect();
            let shapes = (ModalityShape::Vector(3), ModalityShape::Vector(2));
            let data = Dataset::new(samples, 3, shapes, "00ff".into(), seed).unwrap();
            prop_assert_eq!(decode_dataset(&encode_dataset(&data)).unwrap(), data);
        }
    }
}
