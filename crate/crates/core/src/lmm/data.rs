use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LmmError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    ResponseTime,
    ErpAmplitude,
    Other(String),
}

impl FromStr for MeasureKind {
    type Err = LmmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "rt" | "response_time" | "response-time" => MeasureKind::ResponseTime,
            "erp" | "erp_amplitude" | "erp-amplitude" => MeasureKind::ErpAmplitude,
            "" => return Err(LmmError::Spec("empty measure kind".into())),
            other => MeasureKind::Other(other.to_string()),
        })
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureKind::ResponseTime => f.write_str("response_time"),
            MeasureKind::ErpAmplitude => f.write_str("erp_amplitude"),
            MeasureKind::Other(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseObservation {
    pub subject_id: String,
    pub item_id: String,
    pub measure: f64,
    pub covariates: BTreeMap<String, f64>,
}

/// Trial- or item-level responses (reaction times, ERP amplitudes, …) with
/// optional numeric covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDataset {
    pub observations: Vec<ResponseObservation>,
    pub measure_kind: MeasureKind,
    pub transform: Transform,
}

pub const COVARIATE_PREFIX: &str = "covariate_";

impl ResponseDataset {
    pub fn new(
        observations: Vec<ResponseObservation>,
        measure_kind: MeasureKind,
        transform: Transform,
    ) -> Result<Self, LmmError> {
        let d = Self {
            observations,
            measure_kind,
            transform,
        };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<(), LmmError> {
        let names = self.covariate_names();
        for (i, o) in self.observations.iter().enumerate() {
            if o.subject_id.trim().is_empty() || o.item_id.trim().is_empty() {
                return Err(LmmError::Data(format!("observation {}: empty subject or item id", i + 1)));
            }
            if !o.measure.is_finite() {
                return Err(LmmError::Data(format!("observation {}: measure is not finite", i + 1)));
            }
            if self.transform == Transform::Log && o.measure <= 0.0 {
                return Err(LmmError::Data(format!(
                    "observation {}: log transform needs a positive measure, got {}",
                    i + 1,
                    o.measure
                )));
            }
            if o.covariates.len() != names.len() || o.covariates.values().any(|v| !v.is_finite()) {
                return Err(LmmError::Data(format!(
                    "observation {}: covariates must be finite and present for every row",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.observations.iter().flat_map(|o| o.covariates.keys()).collect();
        set.into_iter().cloned().collect()
    }

    pub fn item_ids(&self) -> BTreeSet<String> {
        self.observations.iter().map(|o| o.item_id.clone()).collect()
    }

    /// Transformed response vector.
    pub fn response(&self) -> Vec<f64> {
        self.observations
            .iter()
            .map(|o| match self.transform {
                Transform::Identity => o.measure,
                Transform::Log => o.measure.ln(),
            })
            .collect()
    }

    pub fn read_csv<R: io::Read>(reader: R, measure_kind: MeasureKind, transform: Transform) -> Result<Self, LmmError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| LmmError::Data(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.len() < 3 || header[0] != "subject_id" || header[1] != "item_id" || header[2] != "measure" {
            return Err(LmmError::Data(format!(
                "expected columns subject_id,item_id,measure[,covariate_*], found {}",
                header.join(",")
            )));
        }
        let mut covs = Vec::new();
        for h in &header[3..] {
            match h.strip_prefix(COVARIATE_PREFIX) {
                Some(name) if !name.is_empty() => covs.push(name.to_string()),
                _ => return Err(LmmError::Data(format!("column {h:?} must be named covariate_<name>"))),
            }
        }
        let mut observations = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| LmmError::Data(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<f64, LmmError> {
                rec.get(i)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| LmmError::Data(format!("line {line}: column {} is not a finite number", header[i])))
            };
            let mut covariates = BTreeMap::new();
            for (k, name) in covs.iter().enumerate() {
                covariates.insert(name.clone(), num(3 + k)?);
            }
            observations.push(ResponseObservation {
                subject_id: rec[0].trim().to_string(),
                item_id: rec[1].trim().to_string(),
                measure: num(2)?,
                covariates,
            });
        }
        Self::new(observations, measure_kind, transform)
    }

    pub fn load(path: &Path, measure_kind: MeasureKind, transform: Transform) -> Result<Self, LmmError> {
        let f = std::fs::File::open(path).map_err(|e| LmmError::Data(format!("{}: {e}", path.display())))?;
        Self::read_csv(f, measure_kind, transform)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), LmmError> {
        let names = self.covariate_names();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["subject_id".to_string(), "item_id".into(), "measure".into()];
        header.extend(names.iter().map(|n| format!("{COVARIATE_PREFIX}{n}")));
        let io_err = |e: csv::Error| LmmError::Data(e.to_string());
        w.write_record(&header).map_err(io_err)?;
        for o in &self.observations {
            let mut row = vec![o.subject_id.clone(), o.item_id.clone(), o.measure.to_string()];
            row.extend(names.iter().map(|n| o.covariates[n].to_string()));
            w.write_record(&row).map_err(io_err)?;
        }
        w.flush().map_err(|e| LmmError::Data(e.to_string()))?;
        Ok(())
    }

    /// Copy with an extra covariate looked up per item.
    pub fn with_item_covariate(&self, name: &str, values: &BTreeMap<String, f64>) -> Result<Self, LmmError> {
        let mut out = self.clone();
        for o in &mut out.observations {
            let v = values
                .get(&o.item_id)
                .ok_or_else(|| LmmError::Coverage(format!("no {name} value for item {}", o.item_id)))?;
            o.covariates.insert(name.to_string(), *v);
        }
        Ok(out)
    }

    pub fn restrict_items(&self, keep: &BTreeSet<String>) -> Self {
        let mut out = self.clone();
        out.observations.retain(|o| keep.contains(&o.item_id));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_validation() {
        let text = "subject_id,item_id,measure,covariate_length\ns1,i1,512.5,3\ns1,i2,600,4\ns2,i1,480,3\n";
        let d = ResponseDataset::read_csv(text.as_bytes(), MeasureKind::ResponseTime, Transform::Log).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.covariate_names(), vec!["length"]);
        assert!((d.response()[0] - 512.5f64.ln()).abs() < 1e-15);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);

        assert!(ResponseDataset::read_csv("subject,item\n".as_bytes(), MeasureKind::ErpAmplitude, Transform::Identity).is_err());
        assert!(ResponseDataset::read_csv(
            "subject_id,item_id,measure,length\n".as_bytes(),
            MeasureKind::ErpAmplitude,
            Transform::Identity
        )
        .is_err());
        let neg = "subject_id,item_id,measure\ns1,i1,-2\n";
        assert!(ResponseDataset::read_csv(neg.as_bytes(), MeasureKind::ErpAmplitude, Transform::Log).is_err());
        assert!(ResponseDataset::read_csv(neg.as_bytes(), MeasureKind::ErpAmplitude, Transform::Identity).is_ok());
        let nan = "subject_id,item_id,measure\ns1,i1,NaN\n";
        assert!(ResponseDataset::read_csv(nan.as_bytes(), MeasureKind::ErpAmplitude, Transform::Identity).is_err());
    }
}
