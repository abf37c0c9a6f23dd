//! Per-location training targets: overlap of each location's one-snippet
//! neighborhood with the action body and with dilated boundary regions.

use crate::error::{Error, Result};
use crate::intervals::{iop, Region, RegionKind};
use crate::tem::{AnnotationSet, TemTargets};

/// Boundary regions extend `duration / BOUNDARY_DILATION` to each side of an
/// instance endpoint.
pub(crate) const BOUNDARY_DILATION: f64 = 10.0;

/// Computes `(g_action, g_start, g_end)` for `count` locations starting at
/// `first_location`, spaced `spacing` apart in annotation coordinates.
///
/// For location `t`, the location region is `[t - spacing/2, t + spacing/2]`.
/// For an instance `[t_s, t_e]` with duration `d`, the matched regions are
/// the instance itself, `[t_s - d/10, t_s + d/10]` and `[t_e - d/10, t_e + d/10]`.
/// Each target is the maximum IoP of the location region against the
/// corresponding region over all instances; no instances means all zeros.
pub fn assign_tem_targets(
    annotations: &AnnotationSet,
    first_location: usize,
    count: usize,
    spacing: f64,
) -> Result<TemTargets> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::invalid_argument(format!(
            "location spacing must be positive and finite, got {spacing}"
        )));
    }
    let mut g_action = vec![0.0f64; count];
    let mut g_start = vec![0.0f64; count];
    let mut g_end = vec![0.0f64; count];

    let mut regions = Vec::with_capacity(annotations.instances.len());
    for inst in &annotations.instances {
        let half = inst.duration() / BOUNDARY_DILATION;
        regions.push((
            Region::new(inst.start(), inst.end(), RegionKind::Action)?,
            Region::new(inst.start() - half, inst.start() + half, RegionKind::Start)?,
            Region::new(inst.end() - half, inst.end() + half, RegionKind::End)?,
        ));
    }

    for k in 0..count {
        let t = (first_location + k) as f64 * spacing;
        let loc = Region::new(t - spacing / 2.0, t + spacing / 2.0, RegionKind::Location)?;
        for (action, start, end) in &regions {
            g_action[k] = g_action[k].max(iop(&loc.interval, action));
            g_start[k] = g_start[k].max(iop(&loc.interval, start));
            g_end[k] = g_end[k].max(iop(&loc.interval, end));
        }
    }
    Ok(TemTargets {
        g_action,
        g_start,
        g_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervals::TemporalInterval;
    use proptest::prelude::*;

    fn annotations(instances: &[(f64, f64)]) -> AnnotationSet {
        AnnotationSet::new(
            "v".into(),
            instances
                .iter()
                .map(|(s, e)| TemporalInterval::new(*s, *e).unwrap())
                .collect(),
        )
    }

    #[test]
    fn no_ground_truth_gives_all_zeros() {
        let t = assign_tem_targets(&annotations(&[]), 0, 50, 1.0).unwrap();
        assert!(t.g_action.iter().all(|v| *v == 0.0));
        assert!(t.g_start.iter().all(|v| *v == 0.0));
        assert!(t.g_end.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn location_inside_instance_has_full_actionness() {
        let t = assign_tem_targets(&annotations(&[(20.0, 60.0)]), 0, 100, 1.0).unwrap();
        assert_eq!(t.g_action[40], 1.0);
    }

    #[test]
    fn location_at_instance_start_hand_values() {
        // instance [20, 60]: d = 40, start region [16, 24]
        // location 20 -> region [19.5, 20.5]: inside start region, half inside action
        let t = assign_tem_targets(&annotations(&[(20.0, 60.0)]), 0, 100, 1.0).unwrap();
        assert!((t.g_start[20] - 1.0).abs() < 1e-12);
        assert!((t.g_action[20] - 0.5).abs() < 1e-12);
        // symmetric at the end boundary
        assert!((t.g_end[60] - 1.0).abs() < 1e-12);
        assert!((t.g_action[60] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn window_slice_matches_full_assignment() {
        let ann = annotations(&[(12.0, 44.0), (61.0, 80.0)]);
        let full = assign_tem_targets(&ann, 0, 100, 1.0).unwrap();
        let window = assign_tem_targets(&ann, 30, 40, 1.0).unwrap();
        assert_eq!(window.g_action, &full.g_action[30..70]);
        assert_eq!(window.g_start, &full.g_start[30..70]);
        assert_eq!(window.g_end, &full.g_end[30..70]);
    }

    /// Brute-force overlap oracle: recompute one target by direct interval
    /// arithmetic without the Region plumbing.
    fn oracle_iop(loc: (f64, f64), reg: (f64, f64)) -> f64 {
        let inter = (loc.1.min(reg.1) - loc.0.max(reg.0)).max(0.0);
        inter / (loc.1 - loc.0)
    }

    #[test]
    fn matches_brute_force_oracle_on_a_dense_grid() {
        let instances = [(7.25, 23.5), (40.0, 52.75), (52.9, 90.0)];
        let ann = annotations(&instances);
        let t = assign_tem_targets(&ann, 0, 100, 1.0).unwrap();
        for k in 0..100usize {
            let loc = (k as f64 - 0.5, k as f64 + 0.5);
            let mut ga: f64 = 0.0;
            let mut gs: f64 = 0.0;
            let mut ge: f64 = 0.0;
            for (s, e) in &instances {
                let half = (e - s) / 10.0;
                ga = ga.max(oracle_iop(loc, (*s, *e)));
                gs = gs.max(oracle_iop(loc, (s - half, s + half)));
                ge = ge.max(oracle_iop(loc, (e - half, e + half)));
            }
            assert!((t.g_action[k] - ga).abs() < 1e-12, "g_action at {k}");
            assert!((t.g_start[k] - gs).abs() < 1e-12, "g_start at {k}");
            assert!((t.g_end[k] - ge).abs() < 1e-12, "g_end at {k}");
        }
    }

    proptest! {
        #[test]
        fn targets_stay_in_unit_interval(
            starts in proptest::collection::vec((1.0..80.0f64, 0.5..15.0f64), 0..5),
        ) {
            let instances: Vec<(f64, f64)> =
                starts.iter().map(|(s, d)| (*s, s + d)).collect();
            let t = assign_tem_targets(&annotations(&instances), 0, 100, 1.0).unwrap();
            for v in t.g_action.iter().chain(&t.g_start).chain(&t.g_end) {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }

        #[test]
        fn covered_locations_gain_from_instance_dilation(
            s in 20.0..40.0f64, d in 4.0..20.0f64, grow in 1.0..5.0f64,
        ) {
            // dilating an instance cannot reduce actionness at locations the
            // original instance already covers
            let base = assign_tem_targets(&annotations(&[(s, s + d)]), 0, 100, 1.0).unwrap();
            let grown =
                assign_tem_targets(&annotations(&[(s - grow, s + d + grow)]), 0, 100, 1.0)
                    .unwrap();
            for k in 0..100 {
                let t = k as f64;
                if t - 0.5 >= s && t + 0.5 <= s + d {
                    prop_assert!(grown.g_action[k] + 1e-12 >= base.g_action[k]);
                }
            }
        }
    }
}
