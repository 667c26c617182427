//! Labeled perception-error samples and their CSV / JSON encodings.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ContextFeatures;
use crate::error::{invalid, Error, Result};

/// Which consistency constraint produced a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleSource {
    CrossSensor,
    SpatioTemporal,
}

impl SampleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleSource::CrossSensor => "CrossSensor",
            SampleSource::SpatioTemporal => "SpatioTemporal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "CrossSensor" => Ok(SampleSource::CrossSensor),
            "SpatioTemporal" => Ok(SampleSource::SpatioTemporal),
            other => Err(invalid(format!("unknown sample source '{other}'"))),
        }
    }
}

/// `estimate ⊖ reference` for vector-valued states: elementwise difference.
pub fn compose_error(estimate: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: estimate.len(),
            got: reference.len(),
        });
    }
    Ok(estimate.iter().zip(reference).map(|(a, b)| a - b).collect())
}

/// One autonomously labeled perception error.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSample {
    pub context: ContextFeatures,
    /// Error in native units: 2 entries (pixels) or 1 entry (meters).
    pub error: Vec<f64>,
    pub magnitude: f64,
    pub source: SampleSource,
    pub frame_id: u64,
}

impl ErrorSample {
    pub fn new(context: ContextFeatures, error: Vec<f64>, source: SampleSource, frame_id: u64) -> Result<Self> {
        if error.is_empty() || error.len() > 2 {
            return Err(invalid("error must have 1 or 2 components"));
        }
        let magnitude = error.iter().map(|e| e * e).sum::<f64>().sqrt();
        Ok(Self {
            context,
            error,
            magnitude,
            source,
            frame_id,
        })
    }
}

fn fmt_f64(x: f64) -> String {
    // 17 significant digits round-trips every finite double.
    format!("{x:.16e}")
}

fn header(ctx_dim: usize, err_dim: usize) -> Vec<String> {
    let mut h = vec!["frame_id".to_string(), "source".to_string()];
    h.extend((0..ctx_dim).map(|i| format!("ctx_{i}")));
    h.extend((0..err_dim).map(|i| format!("err_{i}")));
    h.push("magnitude".into());
    h
}

fn check_uniform(samples: &[ErrorSample]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::Empty("sample set".into()))?;
    let (cd, ed) = (first.context.dim(), first.error.len());
    for s in samples {
        if s.context.dim() != cd {
            return Err(Error::DimensionMismatch { expected: cd, got: s.context.dim() });
        }
        if s.error.len() != ed {
            return Err(Error::DimensionMismatch { expected: ed, got: s.error.len() });
        }
    }
    Ok((cd, ed))
}

/// Writes samples as CSV: `frame_id,source,ctx_0..ctx_{D-1},err_0[,err_1],magnitude`.
pub fn write_samples_csv<W: Write>(samples: &[ErrorSample], out: W) -> Result<()> {
    let (cd, ed) = check_uniform(samples)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(cd, ed))?;
    for s in samples {
        let mut rec = vec![s.frame_id.to_string(), s.source.as_str().to_string()];
        rec.extend(s.context.as_slice().iter().map(|&v| fmt_f64(v)));
        rec.extend(s.error.iter().map(|&v| fmt_f64(v)));
        rec.push(fmt_f64(s.magnitude));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| invalid(format!("bad float '{s}': {e}")))
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<ErrorSample>> {
    let mut r = csv::Reader::from_reader(input);
    let hdr = r.headers()?.clone();
    let ctx_dim = hdr.iter().filter(|h| h.starts_with("ctx_")).count();
    let err_dim = hdr.iter().filter(|h| h.starts_with("err_")).count();
    if hdr.iter().collect::<Vec<_>>() != header(ctx_dim, err_dim).iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(invalid("unexpected CSV header"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let frame_id = rec[0].parse::<u64>().map_err(|e| invalid(e.to_string()))?;
        let source = SampleSource::parse(&rec[1])?;
        let ctx = (0..ctx_dim).map(|i| parse_f64(&rec[2 + i])).collect::<Result<Vec<_>>>()?;
        let err = (0..err_dim)
            .map(|i| parse_f64(&rec[2 + ctx_dim + i]))
            .collect::<Result<Vec<_>>>()?;
        let magnitude = parse_f64(&rec[2 + ctx_dim + err_dim])?;
        out.push(ErrorSample {
            context: ContextFeatures::new(ctx)?,
            error: err,
            magnitude,
            source,
            frame_id,
        });
    }
    Ok(out)
}

pub fn samples_to_json(samples: &[ErrorSample]) -> Result<Value> {
    let mut arr = Vec::with_capacity(samples.len());
    for s in samples {
        let mut m = Map::new();
        m.insert("frame_id".into(), Value::from(s.frame_id));
        m.insert("source".into(), Value::from(s.source.as_str()));
        for (i, v) in s.context.as_slice().iter().enumerate() {
            m.insert(format!("ctx_{i}"), Value::from(*v));
        }
        for (i, v) in s.error.iter().enumerate() {
            m.insert(format!("err_{i}"), Value::from(*v));
        }
        m.insert("magnitude".into(), Value::from(s.magnitude));
        arr.push(Value::Object(m));
    }
    Ok(Value::Array(arr))
}

pub fn samples_from_json(v: &Value) -> Result<Vec<ErrorSample>> {
    let arr = v.as_array().ok_or_else(|| invalid("expected a JSON array"))?;
    let num = |m: &Map<String, Value>, k: &str| -> Result<f64> {
        m.get(k)
            .and_then(Value::as_f64)
            .ok_or_else(|| invalid(format!("missing numeric field '{k}'")))
    };
    arr.iter()
        .map(|rec| {
            let m = rec.as_object().ok_or_else(|| invalid("expected a JSON object"))?;
            let count = |p: &str| m.keys().filter(|k| k.starts_with(p)).count();
            let ctx = (0..count("ctx_"))
                .map(|i| num(m, &format!("ctx_{i}")))
                .collect::<Result<Vec<_>>>()?;
            let err = (0..count("err_"))
                .map(|i| num(m, &format!("err_{i}")))
                .collect::<Result<Vec<_>>>()?;
            Ok(ErrorSample {
                context: ContextFeatures::new(ctx)?,
                error: err,
                magnitude: num(m, "magnitude")?,
                source: SampleSource::parse(
                    m.get("source").and_then(Value::as_str).ok_or_else(|| invalid("missing source"))?,
                )?,
                frame_id: m
                    .get("frame_id")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| invalid("missing frame_id"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compose_error_examples() {
        assert_eq!(compose_error(&[5.0], &[5.0]).unwrap(), vec![0.0]);
        assert!((compose_error(&[4.2], &[5.0]).unwrap()[0] + 0.8).abs() < 1e-12);
        let s = ErrorSample::new(
            ContextFeatures::new(vec![0.0]).unwrap(),
            compose_error(&[3.0, 4.0], &[0.0, 0.0]).unwrap(),
            SampleSource::CrossSensor,
            0,
        )
        .unwrap();
        assert_eq!(s.error, vec![3.0, 4.0]);
        assert!((s.magnitude - 5.0).abs() < 1e-12);
    }

    #[test]
    fn compose_error_dimension_mismatch() {
        assert!(matches!(
            compose_error(&[1.0, 2.0], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn arb_sample() -> impl Strategy<Value = ErrorSample> {
        (
            prop::collection::vec(-1e6f64..1e6, 9),
            prop::collection::vec(-1e3f64..1e3, 2),
            any::<bool>(),
            0u64..100_000,
        )
            .prop_map(|(ctx, err, st, fid)| {
                let src = if st { SampleSource::SpatioTemporal } else { SampleSource::CrossSensor };
                ErrorSample::new(ContextFeatures::new(ctx).unwrap(), err, src, fid).unwrap()
            })
    }

    proptest! {
        #[test]
        fn antisymmetric(a in prop::collection::vec(-1e3f64..1e3, 2), b in prop::collection::vec(-1e3f64..1e3, 2)) {
            let ab = compose_error(&a, &b).unwrap();
            let ba = compose_error(&b, &a).unwrap();
            prop_assert!(ab.iter().zip(&ba).all(|(x, y)| *x == -*y));
            prop_assert!(compose_error(&a, &a).unwrap().iter().all(|x| *x == 0.0));
        }

        #[test]
        fn csv_and_json_round_trip_bit_exact(samples in prop::collection::vec(arb_sample(), 1..20)) {
            let mut buf = Vec::new();
            write_samples_csv(&samples, &mut buf).unwrap();
            prop_assert_eq!(&read_samples_csv(buf.as_slice()).unwrap(), &samples);
            let json = serde_json::to_string(&samples_to_json(&samples).unwrap()).unwrap();
            let back = samples_from_json(&serde_json::from_str(&json).unwrap()).unwrap();
            prop_assert_eq!(&back, &samples);
        }
    }
}
