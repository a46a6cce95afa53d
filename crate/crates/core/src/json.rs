//! Serde helpers that write non-finite floats as strings (`"inf"`,
//! `"-inf"`, `"nan"`); plain JSON has no literal for them.

use serde::ser::{SerializeSeq, Serializer};

fn text(x: f64) -> &'static str {
    if x.is_nan() {
        "nan"
    } else if x > 0.0 {
        "inf"
    } else {
        "-inf"
    }
}

pub fn num<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(text(*x))
    }
}

struct Num(f64);

impl serde::Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        num(&self.0, s)
    }
}

pub fn nums<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for &x in v {
        seq.serialize_element(&Num(x))?;
    }
    seq.end()
}

pub fn opt_num<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => num(v, s),
        None => s.serialize_none(),
    }
}

pub fn opt_nums<S: Serializer>(v: &[Option<f64>], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&x.map(Num))?;
    }
    seq.end()
}

pub fn opt_matrix<S: Serializer>(m: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
    match m {
        None => s.serialize_none(),
        Some(rows) => {
            let mut seq = s.serialize_seq(Some(rows.len()))?;
            for row in rows {
                let row: Vec<Num> = row.iter().map(|&x| Num(x)).collect();
                seq.serialize_element(&row)?;
            }
            seq.end()
        }
    }
}
