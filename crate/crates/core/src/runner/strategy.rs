use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::aggregate::{aggregate_recommend, AggregationConfig, AggregationStrategy, RaScores};
use crate::data::ItemId;
use crate::decode::{
    beam_search, greedy_decode, temperature_sample, topk_prediction, GenerationConstraints,
    RecommendationList, SamplingParams,
};
use crate::error::{Error, Result};
use crate::model::NextItemModel;
use crate::rng::rng_for;

fn thirty() -> usize {
    30
}
fn ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyKind {
    TopkPrediction,
    Greedy,
    Beam {
        beams: usize,
    },
    Temperature {
        temperature: f64,
        #[serde(default)]
        topk: Option<usize>,
    },
    Rra {
        /// Falls back to the dataset preset when omitted.
        #[serde(default)]
        temperature: Option<f64>,
        #[serde(default = "thirty")]
        sequences: usize,
        #[serde(default = "ten")]
        topk: usize,
    },
    Ra {
        #[serde(default)]
        temperature: Option<f64>,
        #[serde(default = "thirty")]
        sequences: usize,
        #[serde(default)]
        ra_scores: RaScores,
    },
}

/// One `[[strategies]]` entry: a strategy plus the options every strategy
/// shares (`name`, `seed`, `forbid_history`, `forbid_repeats`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Value", into = "Value")]
pub struct StrategySpec {
    pub name: Option<String>,
    pub kind: StrategyKind,
    pub constraints: GenerationConstraints,
    /// Sampling seed; derived from the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self::new(StrategyKind::TopkPrediction)
    }
}

impl TryFrom<Value> for StrategySpec {
    type Error = String;

    fn try_from(v: Value) -> Result<Self, String> {
        let Value::Object(mut m) = v else {
            return Err("a strategy must be a table".into());
        };
        let name = match m.remove("name") {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => return Err("`name` must be a string".into()),
        };
        let seed = match m.remove("seed") {
            None => None,
            Some(v) => Some(v.as_u64().ok_or("`seed` must be a non-negative integer")?),
        };
        let mut constraints = GenerationConstraints::default();
        for (key, slot) in [
            ("forbid_history", &mut constraints.forbid_history),
            ("forbid_repeats", &mut constraints.forbid_repeats),
        ] {
            if let Some(v) = m.remove(key) {
                *slot = v.as_bool().ok_or_else(|| format!("`{key}` must be a boolean"))?;
            }
        }
        let kind = serde_json::from_value(Value::Object(m)).map_err(|e| e.to_string())?;
        Ok(Self { name, kind, constraints, seed })
    }
}

impl From<StrategySpec> for Value {
    fn from(s: StrategySpec) -> Value {
        let mut m = match serde_json::to_value(&s.kind) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        m.retain(|_, v| !v.is_null());
        if let Some(n) = s.name {
            m.insert("name".into(), n.into());
        }
        if let Some(seed) = s.seed {
            m.insert("seed".into(), seed.into());
        }
        m.insert("forbid_history".into(), s.constraints.forbid_history.into());
        m.insert("forbid_repeats".into(), s.constraints.forbid_repeats.into());
        Value::Object(m)
    }
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        Self { name: None, kind, constraints: GenerationConstraints::default(), seed: None }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn descriptor(&self) -> Value {
        self.clone().into()
    }

    /// Explicit name, or one built from the parameters.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let t = |t: &Option<f64>| t.map_or("preset".to_owned(), |t| t.to_string());
        match &self.kind {
            StrategyKind::TopkPrediction => "topk_prediction".into(),
            StrategyKind::Greedy => "greedy".into(),
            StrategyKind::Beam { beams } => format!("beam(B={beams})"),
            StrategyKind::Temperature { temperature, topk: None } => format!("temperature(T={temperature})"),
            StrategyKind::Temperature { temperature, topk: Some(k) } => {
                format!("temperature(T={temperature},topk={k})")
            }
            StrategyKind::Rra { temperature, sequences, topk } => {
                format!("rra(S={sequences},T={},topk={topk})", t(temperature))
            }
            StrategyKind::Ra { temperature, sequences, .. } => format!("ra(S={sequences},T={})", t(temperature)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(f, m));
        let positive = |t: f64| t > 0.0 && t.is_finite();
        match &self.kind {
            StrategyKind::Beam { beams: 0 } => bad("beams", "must be at least 1"),
            StrategyKind::Temperature { temperature, .. } if !positive(*temperature) => {
                bad("temperature", "must be positive")
            }
            StrategyKind::Temperature { topk: Some(0), .. } => bad("topk", "must be at least 1"),
            StrategyKind::Rra { sequences: 0, .. } | StrategyKind::Ra { sequences: 0, .. } => {
                bad("sequences", "must be at least 1")
            }
            StrategyKind::Rra { topk: 0, .. } => bad("topk", "must be at least 1"),
            StrategyKind::Rra { temperature: Some(t), .. } | StrategyKind::Ra { temperature: Some(t), .. }
                if !positive(*t) =>
            {
                bad("temperature", "must be positive")
            }
            _ => Ok(()),
        }
    }

    /// Replace a missing aggregation temperature with the dataset preset.
    pub fn resolve(&self, dataset: Option<&str>) -> Result<Self> {
        let mut out = self.clone();
        let (temperature, strategy) = match &mut out.kind {
            StrategyKind::Rra { temperature, .. } => (temperature, AggregationStrategy::Rra),
            StrategyKind::Ra { temperature, .. } => (temperature, AggregationStrategy::Ra),
            _ => return Ok(out),
        };
        if temperature.is_none() {
            let preset = dataset.and_then(|d| crate::aggregate::preset_temperature(d, strategy));
            *temperature = Some(preset.ok_or_else(|| {
                Error::config("temperature", "no temperature given and no preset for this dataset")
            })?);
        }
        Ok(out)
    }

    /// Recommend `k` items for one user. `user` selects the random stream.
    pub fn recommend<M: NextItemModel>(
        &self,
        model: &M,
        history: &[ItemId],
        user: u64,
        k: usize,
        run_seed: u64,
    ) -> Result<RecommendationList> {
        let seed = self.seed.unwrap_or_else(|| crate::rng::derive_seed(run_seed, "sampling", &[]));
        let c = &self.constraints;
        Ok(match &self.kind {
            StrategyKind::TopkPrediction => topk_prediction(model, history, k, c)?,
            StrategyKind::Greedy => greedy_decode(model, history, k, c)?.to_recommendations(),
            StrategyKind::Beam { beams } => beam_search(model, history, k, *beams, c)?.to_recommendations(),
            StrategyKind::Temperature { temperature, topk } => {
                let params = SamplingParams { topk: *topk, ..SamplingParams::new(*temperature) };
                let mut rng = rng_for(seed, "temperature", &[user]);
                temperature_sample(model, history, k, &params, &mut rng, c)?.to_recommendations()
            }
            StrategyKind::Rra { temperature, sequences, topk } => {
                let cfg = AggregationConfig {
                    sequences: *sequences,
                    k,
                    topk: *topk,
                    seed,
                    ..AggregationConfig::new(AggregationStrategy::Rra, unresolved(*temperature)?)
                };
                aggregate_recommend(model, history, user, &cfg)?
            }
            StrategyKind::Ra { temperature, sequences, ra_scores } => {
                let cfg = AggregationConfig {
                    sequences: *sequences,
                    k,
                    seed,
                    ra_scores: *ra_scores,
                    ..AggregationConfig::new(AggregationStrategy::Ra, unresolved(*temperature)?)
                };
                aggregate_recommend(model, history, user, &cfg)?
            }
        })
    }

    /// Same strategy with a different number of sampled sequences, if it
    /// has that parameter.
    pub fn with_sequences(&self, s: usize) -> Option<Self> {
        let mut out = self.clone();
        match &mut out.kind {
            StrategyKind::Rra { sequences, .. } | StrategyKind::Ra { sequences, .. } => *sequences = s,
            _ => return None,
        }
        out.name = None;
        Some(out)
    }
}

fn unresolved(t: Option<f64>) -> Result<f64> {
    t.ok_or_else(|| Error::config("temperature", "aggregation temperature was not resolved"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> std::result::Result<StrategySpec, String> {
        let v: Value = toml::from_str(text).map_err(|e| e.to_string())?;
        StrategySpec::try_from(v)
    }

    #[test]
    fn parses_every_kind() {
        assert_eq!(parse("strategy = \"greedy\"").unwrap().kind, StrategyKind::Greedy);
        let s = parse("strategy = \"beam\"\nbeams = 4\nname = \"b4\"\nforbid_repeats = false").unwrap();
        assert_eq!(s.kind, StrategyKind::Beam { beams: 4 });
        assert_eq!(s.label(), "b4");
        assert!(!s.constraints.forbid_repeats);
        let s = parse("strategy = \"rra\"\ntemperature = 0.5").unwrap();
        assert_eq!(s.kind, StrategyKind::Rra { temperature: Some(0.5), sequences: 30, topk: 10 });
        assert_eq!(s.label(), "rra(S=30,T=0.5,topk=10)");
    }

    #[test]
    fn rejects_unknown_fields_and_kinds() {
        assert!(parse("strategy = \"beam\"\nbeams = 2\nwidth = 3").is_err());
        assert!(parse("strategy = \"nucleus\"").is_err());
        assert!(parse("beams = 2").is_err());
    }

    #[test]
    fn value_roundtrip() {
        let s = parse("strategy = \"ra\"\nsequences = 5\nseed = 3").unwrap();
        let back = StrategySpec::try_from(s.descriptor()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn presets_fill_missing_temperature() {
        let s = parse("strategy = \"ra\"").unwrap();
        assert!(s.resolve(None).is_err());
        let r = s.resolve(Some("ml-20m")).unwrap();
        assert!(matches!(r.kind, StrategyKind::Ra { temperature: Some(t), .. } if t == 1.2));
    }
}
