//! Text formats: problem documents, distribution records and a JSON writer
//! that prints every float with 17 significant digits.
//!
//! Seventeen digits are enough to round-trip any `f64`, so a distribution
//! written with [`to_json_string`] and read back with
//! [`distribution_from_records`] is bit-for-bit the original.
//!
//! ```
//! use persuade::io::{format_f64, to_json_string};
//! assert_eq!(format_f64(0.1), "0.10000000000000001");
//! assert_eq!(format_f64(2.5e-9), "2.5000000000000001e-9");
//! assert_eq!(to_json_string(&vec![1.0, -0.5]), "[\n  1.0000000000000000,\n  -0.50000000000000000\n]");
//! ```

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::model::{Atom, BeliefTimeDistribution, Primitives};

/// Formats `x` with 17 significant digits and a `.` decimal point.
///
/// Magnitudes in `[1e-5, 1e17)` use positional notation, everything else
/// scientific. Non-finite values print as `NaN`, `inf` and `-inf`.
pub fn format_f64(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{x:.16e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(1) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

/// Pretty JSON whose floats go through [`format_f64`].
struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as indented JSON. Struct fields keep their declared
/// order and maps built from `serde_json::Value` are sorted, so equal inputs
/// give equal bytes. Non-finite floats become `null`.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("serializing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// Parses and validates a problem document with keys `states`, `actions`,
/// `times`, `prior`, `u` and `v`.
pub fn problem_from_json(text: &str) -> Result<Primitives> {
    let prim: Primitives = serde_json::from_str(text).map_err(|e| Error::invalid("problem", e.to_string()))?;
    prim.validate()?;
    Ok(prim)
}

/// One stopping atom with its time as a value rather than a grid index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomRecord {
    pub belief: Vec<f64>,
    pub time: f64,
    pub weight: f64,
}

pub fn distribution_records(f: &BeliefTimeDistribution) -> Vec<AtomRecord> {
    f.atoms
        .iter()
        .map(|a| AtomRecord { belief: a.belief.clone(), time: f.times[a.time], weight: a.weight })
        .collect()
}

/// Rebuilds a distribution on `times`. Record times must equal grid times
/// up to a relative 1e-12.
pub fn distribution_from_records(times: &[f64], records: &[AtomRecord]) -> Result<BeliefTimeDistribution> {
    let atoms = records
        .iter()
        .map(|r| {
            let k = times
                .iter()
                .position(|&t| (t - r.time).abs() <= 1e-12 * t.abs().max(1.0))
                .ok_or_else(|| Error::invalid("distribution", format!("time {} is not on the grid", r.time)))?;
            Ok(Atom { belief: r.belief.clone(), time: k, weight: r.weight })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeliefTimeDistribution::new(times.to_vec(), atoms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.0, 1e-300, 6.02e23, 0.30000000000000004, f64::MIN_POSITIVE, 123456.789] {
            let s = format_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            assert!(!s.contains(','));
        }
        assert_eq!(format_f64(1.0), "1.0000000000000000");
        assert_eq!(format_f64(-0.0), "-0.0");
    }

    #[test]
    fn distribution_round_trip_is_exact() {
        let times = vec![0.0, 0.1, 0.30000000000000004];
        let f = BeliefTimeDistribution::new(
            times.clone(),
            vec![
                Atom { belief: vec![1.0 / 3.0, 2.0 / 3.0], time: 2, weight: 0.7 },
                Atom { belief: vec![0.9, 0.1], time: 0, weight: 0.3 },
            ],
        );
        let text = to_json_string(&distribution_records(&f));
        let back: Vec<AtomRecord> = serde_json::from_str(&text).unwrap();
        assert_eq!(distribution_from_records(&times, &back).unwrap(), f);
    }

    #[test]
    fn off_grid_time_is_rejected() {
        let rec = [AtomRecord { belief: vec![1.0], time: 0.5, weight: 1.0 }];
        assert!(distribution_from_records(&[0.0, 1.0], &rec).is_err());
    }

    #[test]
    fn bad_prior_names_the_field() {
        let doc = r#"{"states":["a","b"],"actions":["x"],"times":[0,1],"prior":[0.5,0.4],
            "u":[[[0,0]],[[0,0]]],"v":[[[0,0]],[[0,0]]]}"#;
        let err = problem_from_json(doc).unwrap_err();
        assert!(err.to_string().contains("prior"), "{err}");
    }
}
