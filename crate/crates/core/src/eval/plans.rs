use crate::corpus::LanguageId;
use crate::error::{Error, Result};
use crate::identify::NeuronSelection;
use crate::model::{InterventionPlan, Override};
use crate::probe::{ActivationStats, MeanMode};

/// Zero every neuron of `language`'s set.
pub fn deactivation_plan(selection: &NeuronSelection, language: &LanguageId) -> Result<InterventionPlan> {
    Ok(selection.set(language)?.iter().map(|&n| (n, Override::Zero)).collect())
}

/// Raise `activate`'s neurons to their mean value for that language and,
/// optionally, zero `deactivate`'s neurons. A neuron in both sets keeps
/// the activation value.
pub fn steering_plan(
    selection: &NeuronSelection,
    activate: &LanguageId,
    stats: &ActivationStats,
    deactivate: Option<&LanguageId>,
    mode: MeanMode,
) -> Result<InterventionPlan> {
    if selection.n_layers != stats.n_layers() || selection.ffn_width != stats.ffn_width() {
        return Err(Error::Geometry("selection and statistics describe different models".into()));
    }
    let up = selection.set(activate)?;
    let mut plan = InterventionPlan::new();
    if let Some(d) = deactivate {
        for &n in selection.set(d)? {
            if !up.contains(&n) {
                plan.set_zero(n);
            }
        }
    }
    for &n in up {
        plan.set_value(n, stats.mean_activation(n, activate, mode)?)?;
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::lang;
    use crate::identify::{select_lap, select_random};
    use crate::model::NeuronId;
    use std::collections::BTreeMap;

    fn fixture() -> (NeuronSelection, ActivationStats) {
        // 3 neurons: 0 → a, 1 → a and b, 2 → b
        let langs = vec![lang("a"), lang("b")];
        let stats = ActivationStats::from_parts(
            1,
            3,
            langs,
            vec![10, 10],
            vec![vec![10, 10, 0], vec![0, 10, 10]],
            vec![vec![5.0, 2.0, 0.0], vec![0.0, 3.0, 4.0]],
            None,
        )
        .unwrap();
        (select_lap(&stats, 0.5).unwrap(), stats)
    }

    #[test]
    fn deactivation_is_a_bijection() {
        let (sel, _) = fixture();
        for l in [lang("a"), lang("b")] {
            let plan = deactivation_plan(&sel, &l).unwrap();
            assert_eq!(plan.len(), sel.set(&l).unwrap().len());
            assert!(plan.iter().all(|(_, o)| *o == Override::Zero));
        }
        assert!(deactivation_plan(&sel, &lang("zz")).is_err());
        let empty = select_random(&[(lang("a"), 0)].into_iter().collect::<BTreeMap<_, _>>(), 1, 3, 0).unwrap();
        assert!(deactivation_plan(&empty, &lang("a")).unwrap().is_empty());
    }

    #[test]
    fn shared_neuron_keeps_activation() {
        let (sel, stats) = fixture();
        let plan = steering_plan(&sel, &lang("a"), &stats, Some(&lang("b")), MeanMode::Unconditional).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan.get(&NeuronId::new(1, 0)), Some(Override::Value(0.5)));
        assert_eq!(plan.get(&NeuronId::new(1, 1)), Some(Override::Value(0.2)));
        assert_eq!(plan.get(&NeuronId::new(1, 2)), Some(Override::Zero));
    }

    #[test]
    fn zero_means_equal_deactivation() {
        let langs = vec![lang("a"), lang("b")];
        let stats = ActivationStats::from_parts(
            1,
            2,
            langs,
            vec![4, 4],
            vec![vec![4, 0], vec![0, 0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            None,
        )
        .unwrap();
        let sel = select_lap(&stats, 0.5).unwrap();
        let steer = steering_plan(&sel, &lang("a"), &stats, None, MeanMode::Unconditional).unwrap();
        let off = deactivation_plan(&sel, &lang("a")).unwrap();
        let values = |p: &InterventionPlan| p.iter().map(|(n, o)| (*n, o.value())).collect::<Vec<_>>();
        assert_eq!(values(&steer), values(&off));
    }
}
