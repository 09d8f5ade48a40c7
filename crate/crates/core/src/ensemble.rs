//! Ensembling by unweighted output averaging, with optional per-domain
//! checkpoint routing inside a member.
//!
//! Members are independent prediction sources — saved checkpoints,
//! prediction CSVs, or a router that answers each domain with its own
//! checkpoint. Only outputs are combined; parameters never are.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Domain};
use crate::error::{Error, Result};
use crate::evaluation::PredictionSet;
use crate::model::Checkpoint;
use crate::pipeline::write_atomic;

/// Where one ensemble member's predictions come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberSource {
    /// A saved checkpoint, run over the evaluation dataset.
    Checkpoint(PathBuf),
    /// A prediction CSV produced earlier.
    Predictions(PathBuf),
    /// One checkpoint per domain; each instance is scored by the
    /// checkpoint registered for its domain.
    Routed(BTreeMap<Domain, PathBuf>),
}

/// A fully described ensemble: at least one member; routed members must
/// cover all three domains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<MemberSource>,
}

impl EnsembleSpec {
    pub fn new(members: Vec<MemberSource>) -> Result<EnsembleSpec> {
        let spec = EnsembleSpec { members };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::invalid("an ensemble needs at least one member"));
        }
        for (i, member) in self.members.iter().enumerate() {
            if let MemberSource::Routed(routes) = member {
                for domain in Domain::ALL {
                    if !routes.contains_key(&domain) {
                        return Err(Error::invalid(format!(
                            "member {i}: routing does not cover domain {domain}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EnsembleSpec> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let spec: EnsembleSpec =
            serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let bytes = serde_json::to_vec_pretty(self).expect("spec serializes");
        write_atomic(path.as_ref(), &bytes)
    }
}

/// The checkpoint a routed member uses for one domain.
pub fn route_by_domain(routes: &BTreeMap<Domain, PathBuf>, domain: Domain) -> Result<&Path> {
    routes
        .get(&domain)
        .map(PathBuf::as_path)
        .ok_or_else(|| Error::invalid(format!("no route for domain {domain}")))
}

/// Per-id arithmetic mean over members. All members must cover exactly
/// the same ids. Members that agree bit-for-bit pass their value through
/// unchanged, so an ensemble of identical members is the identity;
/// otherwise values are summed in a canonical order so member order
/// never changes the result.
pub fn ensemble_average(members: &[PredictionSet]) -> Result<PredictionSet> {
    if members.is_empty() {
        return Err(Error::invalid("an ensemble needs at least one member"));
    }
    let first = &members[0];
    for (i, m) in members.iter().enumerate().skip(1) {
        if m.len() != first.len() {
            return Err(Error::invalid(format!(
                "member {i} covers {} ids but member 0 covers {}",
                m.len(),
                first.len()
            )));
        }
        if let Some(id) = first.ids().find(|id| m.get(id).is_none()) {
            return Err(Error::invalid(format!("member {i} is missing id '{id}'")));
        }
    }
    let mut out = PredictionSet::new();
    let n = members.len() as f64;
    for (id, v0) in first.iter() {
        let mut values: Vec<f64> = members.iter().map(|m| m.get(id).unwrap()).collect();
        let mean = if values.iter().all(|v| v.to_bits() == v0.to_bits()) {
            v0
        } else {
            values.sort_by(|a, b| a.total_cmp(b));
            let sum: f64 = values.iter().sum();
            (sum / n).clamp(0.0, 1.0)
        };
        out.insert(id, mean)?;
    }
    Ok(out)
}

fn resolve_member(member: &MemberSource, data: Option<&Dataset>) -> Result<PredictionSet> {
    match member {
        MemberSource::Checkpoint(path) => {
            let data = data.ok_or_else(|| {
                Error::invalid("checkpoint members need a dataset to predict on")
            })?;
            Checkpoint::load(path)?.predict_dataset(data)
        }
        MemberSource::Predictions(path) => PredictionSet::load_csv(path),
        MemberSource::Routed(routes) => {
            let data = data.ok_or_else(|| {
                Error::invalid("routed members need a dataset to predict on")
            })?;
            let mut out = PredictionSet::new();
            let parts = crate::corpus::partition_by_domain(data);
            for (domain, subset) in &parts {
                if subset.is_empty() {
                    continue;
                }
                let path = route_by_domain(routes, *domain)?;
                let preds = Checkpoint::load(path)?.predict_dataset(subset)?;
                for (id, score) in preds.iter() {
                    out.insert(id, score)?;
                }
            }
            Ok(out)
        }
    }
}

/// Resolves every member to a full prediction set, then averages.
/// `data` is required whenever any member is a checkpoint or router.
pub fn predict_ensemble(spec: &EnsembleSpec, data: Option<&Dataset>) -> Result<PredictionSet> {
    spec.validate()?;
    let mut sets = Vec::with_capacity(spec.members.len());
    for (i, member) in spec.members.iter().enumerate() {
        let preds = resolve_member(member, data)
            .map_err(|e| Error::invalid(format!("ensemble member {i}: {e}")))?;
        sets.push(preds);
    }
    ensemble_average(&sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Instance, Subtask};
    use crate::encoding::build_vocab;
    use crate::model::{init_model, EncoderConfig};

    fn set_of(pairs: &[(&str, f64)]) -> PredictionSet {
        let mut s = PredictionSet::new();
        for (id, v) in pairs {
            s.insert(id, *v).unwrap();
        }
        s
    }

    #[test]
    fn identical_members_average_to_themselves() {
        let a = set_of(&[("x", 0.1), ("y", 0.7), ("z", 0.30000000000000004)]);
        for copies in [1usize, 2, 3, 7] {
            let members: Vec<PredictionSet> = (0..copies).map(|_| a.clone()).collect();
            let mean = ensemble_average(&members).unwrap();
            for (id, v) in a.iter() {
                assert_eq!(mean.get(id).unwrap().to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn three_member_mean_matches_hand_arithmetic() {
        let members = vec![
            set_of(&[("a", 0.1)]),
            set_of(&[("a", 0.2)]),
            set_of(&[("a", 0.6)]),
        ];
        let mean = ensemble_average(&members).unwrap();
        assert!((mean.get("a").unwrap() - 0.3).abs() <= 1e-15);

        let pair = vec![set_of(&[("a", 0.2)]), set_of(&[("a", 0.4)])];
        let mean = ensemble_average(&pair).unwrap();
        assert!((mean.get("a").unwrap() - 0.3).abs() <= 1e-15);
    }

    #[test]
    fn mean_respects_per_id_min_max_and_permutation() {
        let mut rng_state = 0x2545_f491_4f6c_dd1du64;
        let mut next = move || {
            // xorshift is plenty for fuzz values
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        let ids: Vec<String> = (0..25).map(|i| format!("id{i}")).collect();
        let members: Vec<PredictionSet> = (0..5)
            .map(|_| {
                let mut s = PredictionSet::new();
                for id in &ids {
                    s.insert(id, next()).unwrap();
                }
                s
            })
            .collect();
        let mean = ensemble_average(&members).unwrap();
        for id in &ids {
            let values: Vec<f64> = members.iter().map(|m| m.get(id).unwrap()).collect();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = mean.get(id).unwrap();
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
        // any member order gives the bit-identical result
        let mut reordered = members.clone();
        reordered.reverse();
        let mean2 = ensemble_average(&reordered).unwrap();
        reordered.swap(0, 2);
        let mean3 = ensemble_average(&reordered).unwrap();
        for id in &ids {
            assert_eq!(
                mean.get(id).unwrap().to_bits(),
                mean2.get(id).unwrap().to_bits()
            );
            assert_eq!(
                mean.get(id).unwrap().to_bits(),
                mean3.get(id).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn averaging_is_linear_in_member_multiplicity() {
        let a = set_of(&[("k", 0.25)]);
        let b = set_of(&[("k", 0.85)]);
        let mean = ensemble_average(&[a.clone(), a.clone(), b.clone()]).unwrap();
        let expect = (2.0 * 0.25 + 0.85) / 3.0;
        assert!((mean.get("k").unwrap() - expect).abs() <= 1e-15);
    }

    #[test]
    fn id_set_mismatch_is_an_error() {
        let a = set_of(&[("x", 0.1), ("y", 0.2)]);
        let b = set_of(&[("x", 0.3)]);
        assert!(ensemble_average(&[a.clone(), b]).is_err());
        let c = set_of(&[("x", 0.3), ("zz", 0.4)]);
        assert!(ensemble_average(&[a, c]).is_err());
        assert!(ensemble_average(&[]).is_err());
    }

    #[test]
    fn spec_validation_requires_full_routing() {
        assert!(EnsembleSpec::new(vec![]).is_err());
        let partial: BTreeMap<Domain, PathBuf> = [
            (Domain::Europarl, PathBuf::from("a.json")),
            (Domain::Biomed, PathBuf::from("b.json")),
        ]
        .into();
        assert!(EnsembleSpec::new(vec![MemberSource::Routed(partial)]).is_err());

        let full: BTreeMap<Domain, PathBuf> = Domain::ALL
            .iter()
            .map(|&d| (d, PathBuf::from(format!("{d}.json"))))
            .collect();
        let spec = EnsembleSpec::new(vec![MemberSource::Routed(full.clone())]).unwrap();
        assert_eq!(
            route_by_domain(&full, Domain::Bible).unwrap(),
            Path::new("bible.json")
        );
        assert_eq!(spec.members.len(), 1);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let full: BTreeMap<Domain, PathBuf> = Domain::ALL
            .iter()
            .map(|&d| (d, PathBuf::from(format!("ckpt_{d}.json"))))
            .collect();
        let spec = EnsembleSpec::new(vec![
            MemberSource::Checkpoint(PathBuf::from("best.ckpt.json")),
            MemberSource::Predictions(PathBuf::from("preds.csv")),
            MemberSource::Routed(full),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble.json");
        spec.save(&path).unwrap();
        let loaded = EnsembleSpec::load(&path).unwrap();
        assert_eq!(spec, loaded);
    }

    fn tiny_dataset() -> Dataset {
        let rows = [
            ("e1", Domain::Europarl, "the assembly voted", "assembly"),
            ("e2", Domain::Europarl, "the motion passed", "motion"),
            ("b1", Domain::Biomed, "the cell membrane", "membrane"),
            ("b2", Domain::Biomed, "a protein fold", "protein"),
            ("s1", Domain::Bible, "an ancient temple", "temple"),
            ("s2", Domain::Bible, "the scroll was read", "scroll"),
        ];
        let instances = rows
            .iter()
            .map(|&(id, domain, sentence, target)| Instance {
                id: id.into(),
                subtask: Subtask::SingleWord,
                domain,
                sentence: sentence.into(),
                target: target.into(),
                gold: Some(0.4),
            })
            .collect();
        Dataset::new(Subtask::SingleWord, instances).unwrap()
    }

    #[test]
    fn checkpoint_and_prediction_members_combine() {
        let data = tiny_dataset();
        let vocab = build_vocab(&data, 1).unwrap();
        let cfg = EncoderConfig::toy(vocab.len(), 16);
        let dir = tempfile::tempdir().unwrap();

        let model = init_model(&cfg, false, 8).unwrap();
        let ckpt = Checkpoint::new(Subtask::SingleWord, 8, model, vocab, None);
        let ckpt_path = dir.path().join("m.ckpt.json");
        ckpt.save(&ckpt_path).unwrap();
        let direct = ckpt.predict_dataset(&data).unwrap();

        let csv_path = dir.path().join("m.csv");
        direct.save_csv(&csv_path).unwrap();

        // one checkpoint member alone reproduces its own predictions
        let solo = EnsembleSpec::new(vec![MemberSource::Checkpoint(ckpt_path.clone())]).unwrap();
        let out = predict_ensemble(&solo, Some(&data)).unwrap();
        for (id, v) in direct.iter() {
            assert_eq!(out.get(id).unwrap().to_bits(), v.to_bits());
        }

        // checkpoint + its own prediction file: identical members, identity
        let both = EnsembleSpec::new(vec![
            MemberSource::Checkpoint(ckpt_path.clone()),
            MemberSource::Predictions(csv_path),
        ])
        .unwrap();
        let out = predict_ensemble(&both, Some(&data)).unwrap();
        for (id, v) in direct.iter() {
            assert_eq!(out.get(id).unwrap().to_bits(), v.to_bits());
        }

        // a routed member pointing every domain at the same checkpoint
        // behaves like the plain checkpoint member
        let routes: BTreeMap<Domain, PathBuf> =
            Domain::ALL.iter().map(|&d| (d, ckpt_path.clone())).collect();
        let routed = EnsembleSpec::new(vec![MemberSource::Routed(routes)]).unwrap();
        let out = predict_ensemble(&routed, Some(&data)).unwrap();
        assert_eq!(out.len(), data.len());
        for (id, v) in direct.iter() {
            assert_eq!(out.get(id).unwrap().to_bits(), v.to_bits());
        }

        // checkpoint member without data is a clear error
        assert!(predict_ensemble(&solo, None).is_err());
        // missing file carries the member identity
        let missing = EnsembleSpec::new(vec![MemberSource::Checkpoint(
            dir.path().join("absent.ckpt.json"),
        )])
        .unwrap();
        let err = predict_ensemble(&missing, Some(&data)).unwrap_err().to_string();
        assert!(err.contains("member 0"), "{err}");
    }
}
