use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const CD_CONVENTION: &str = "sum of directed mean nearest-neighbour distances";

/// Evaluation results plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cd: f64,
    pub fs: f64,
    pub tau: f64,
    pub samples: usize,
    pub seed: u64,
    pub cd_convention: String,
    /// PSNR in dB; identical images are reported as `"inf"`.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "ser_db",
        deserialize_with = "de_db"
    )]
    pub psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
}

impl MetricReport {
    pub fn new(cd: f64, fs: f64, tau: f64, samples: usize, seed: u64) -> Self {
        Self {
            cd,
            fs,
            tau,
            samples,
            seed,
            cd_convention: CD_CONVENTION.into(),
            psnr: None,
            ssim: None,
        }
    }

    /// Two-column `metric  value` table.
    pub fn to_table(&self) -> String {
        let mut rows = vec![
            ("cd".to_string(), format!("{:.6}", self.cd)),
            (format!("fs@{}", self.tau), format!("{:.6}", self.fs)),
        ];
        if let Some(p) = self.psnr {
            let v = if p.is_infinite() { "inf".into() } else { format!("{p:.4}") };
            rows.push(("psnr_db".into(), v));
        }
        if let Some(s) = self.ssim {
            rows.push(("ssim".into(), format!("{s:.6}")));
        }
        rows.push(("samples".into(), self.samples.to_string()));
        rows.push(("seed".into(), self.seed.to_string()));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = format!("{:<width$}  value\n", "metric");
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v:>12}\n"));
        }
        out.push_str(&format!("cd = {}\n", self.cd_convention));
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Db {
    Finite(f64),
    Text(String),
}

fn ser_db<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_infinite() && *x > 0.0 => s.serialize_str("inf"),
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    match Option::<Db>::deserialize(d)? {
        None => Ok(None),
        Some(Db::Finite(x)) => Ok(Some(x)),
        Some(Db::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
        Some(Db::Text(t)) => Err(serde::de::Error::custom(format!("bad dB value {t:?}"))),
    }
}
