//! Deployment: enumerate the cost of every operating point, pick one under
//! resource budgets, extract it as a standalone model, and persist models
//! as checkpoints.

mod checkpoint;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{model_costs_per_second, FullModelParams, SubnetConfig};

/// Cost of one operating point, with an optional measured quality score.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub w: usize,
    pub d: usize,
    pub params: u64,
    /// Multiply-accumulates needed per second of audio.
    pub macs_per_s: f64,
    /// Separation quality if it was measured, dB.
    pub snr_db: Option<f64>,
}

/// Costs of every `(w, d)` in a model's grid, ordered by `w` then `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub rows: Vec<CostRow>,
}

/// Computes the full cost table of a configuration.
pub fn enumerate_costs(config: &ModelConfig) -> Result<CostTable> {
    let mut rows = Vec::with_capacity(config.subnet_count());
    for w in 1..=config.max_width {
        for d in 1..=config.max_depth {
            let cost = model_costs_per_second(config, SubnetConfig::new(w, d))?;
            rows.push(CostRow {
                w,
                d,
                params: cost.params,
                macs_per_s: cost.macs,
                snr_db: None,
            });
        }
    }
    Ok(CostTable { rows })
}

impl CostTable {
    pub fn row(&self, w: usize, d: usize) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.w == w && r.d == d)
    }

    /// True when params and MACs both strictly increase along each axis.
    pub fn is_monotone(&self) -> bool {
        for r in &self.rows {
            for (nw, nd) in [(r.w + 1, r.d), (r.w, r.d + 1)] {
                if let Some(next) = self.row(nw, nd) {
                    if next.params <= r.params || next.macs_per_s <= r.macs_per_s {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// CSV rendering with header `w,d,params,macs_per_s,snr_db`; the SNR
    /// field is empty for unmeasured rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("w,d,params,macs_per_s,snr_db\n");
        for r in &self.rows {
            let snr = match r.snr_db {
                Some(v) => format!("{v:.4}"),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{:.0},{}\n",
                r.w, r.d, r.params, r.macs_per_s, snr
            ));
        }
        out
    }
}

/// Which axis to favor when several operating points fit the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preference {
    /// Deepest feasible network, widest among equally deep (default: depth
    /// buys more quality per MAC than width).
    Depth,
    /// Widest feasible network, deepest among equally wide.
    Width,
}

/// Picks the best operating point whose cost fits every given budget
/// (inclusive). With no feasible row, reports the cheapest point's cost so
/// callers can see how far off the budget is.
pub fn select_config(
    table: &CostTable,
    max_params: Option<u64>,
    max_macs_per_s: Option<f64>,
    prefer: Preference,
) -> Result<SubnetConfig> {
    let feasible: Vec<&CostRow> = table
        .rows
        .iter()
        .filter(|r| {
            max_params.map_or(true, |cap| r.params <= cap)
                && max_macs_per_s.map_or(true, |cap| r.macs_per_s <= cap)
        })
        .collect();
    if feasible.is_empty() {
        let cheapest = table
            .rows
            .iter()
            .min_by(|a, b| {
                (a.params, a.macs_per_s)
                    .partial_cmp(&(b.params, b.macs_per_s))
                    .unwrap()
            })
            .ok_or_else(|| Error::Config("cost table is empty".into()))?;
        return Err(Error::BudgetTooSmall {
            min_params: cheapest.params,
            min_macs: cheapest.macs_per_s,
        });
    }
    let best = feasible
        .into_iter()
        .max_by_key(|r| match prefer {
            Preference::Depth => (r.d, r.w),
            Preference::Width => (r.w, r.d),
        })
        .unwrap();
    Ok(SubnetConfig::new(best.w, best.d))
}

/// Copies the `(w, d)` subnetwork out of `params` as a standalone model:
/// the first `d` depth units, the first `w` experts of each layer, the
/// complete reweighting module, and all band-split/mask FCs.
pub fn extract_subnet(params: &FullModelParams, subnet: SubnetConfig) -> Result<FullModelParams> {
    subnet.validate(&params.config)?;
    let mut config = params.config.clone();
    config.max_width = subnet.w;
    config.max_depth = subnet.d;
    let dims = config.layer_dims();
    let truncate = |layer: &crate::dynamic_layer::DynamicLayerParams| {
        let mut out = layer.clone();
        out.dims = dims.clone();
        out.experts.truncate(subnet.w);
        out
    };
    let units = params.units[..subnet.d]
        .iter()
        .map(|u| crate::model::DepthUnit {
            seq: truncate(&u.seq),
            band: u.band.as_ref().map(&truncate),
        })
        .collect();
    Ok(FullModelParams {
        config,
        band_split: params.band_split.clone(),
        units,
        mask: params.mask.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Spectrogram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 3,
            reweight_features: 2,
            max_width: 3,
            max_depth: 3,
            rnn_hidden: 2,
            tac_hidden: 2,
            bands: 2,
            stft_window: 8,
            stft_hop: 4,
            sample_rate: 64,
            ..ModelConfig::desk()
        }
    }

    fn random_spec<R: Rng>(bins: usize, frames: usize, rng: &mut R) -> Spectrogram {
        let mut s = Spectrogram::zeros(1, bins, frames, 64);
        for v in s.channel_re_mut(0).iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in s.channel_im_mut(0).iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        s
    }

    #[test]
    fn enumeration_covers_the_grid_in_order() {
        let table = enumerate_costs(&ModelConfig::desk()).unwrap();
        assert_eq!(table.rows.len(), 16);
        assert_eq!((table.rows[0].w, table.rows[0].d), (1, 1));
        assert_eq!((table.rows[5].w, table.rows[5].d), (2, 2));
        assert!(table.is_monotone());

        let paper = enumerate_costs(&ModelConfig::paper_scale()).unwrap();
        assert_eq!(paper.rows.len(), 192);
        assert!(paper.is_monotone());
    }

    #[test]
    fn csv_has_the_expected_header_and_rows() {
        let mut table = enumerate_costs(&tiny_config()).unwrap();
        table.rows[0].snr_db = Some(7.25);
        let csv = table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("w,d,params,macs_per_s,snr_db"));
        let first = lines.next().unwrap();
        assert!(first.starts_with("1,1,"), "{first}");
        assert!(first.ends_with(",7.2500"), "{first}");
        // Unmeasured rows leave the last field empty.
        assert!(lines.next().unwrap().ends_with(','));
        assert_eq!(csv.lines().count(), 1 + 9);
    }

    #[test]
    fn selection_respects_budgets_and_preference() {
        let config = ModelConfig::desk();
        let table = enumerate_costs(&config).unwrap();

        // No budgets: the full network wins under either preference.
        for prefer in [Preference::Depth, Preference::Width] {
            let s = select_config(&table, None, None, prefer).unwrap();
            assert_eq!(s, SubnetConfig::new(4, 4));
        }

        // A params cap between (4,2) and (4,3): prefer depth trades width
        // away, prefer width keeps it.
        let cap = table.row(4, 2).unwrap().params;
        let deep = select_config(&table, Some(cap), None, Preference::Depth).unwrap();
        let wide = select_config(&table, Some(cap), None, Preference::Width).unwrap();
        assert!(deep.d >= wide.d && wide.w >= deep.w);
        assert!(table.row(deep.w, deep.d).unwrap().params <= cap);
        assert!(table.row(wide.w, wide.d).unwrap().params <= cap);
        assert_eq!(wide.w, 4, "width preference keeps full width under this cap");
        assert!(deep.d > 2, "depth preference buys more depth than (4,2)");

        // Budgets are inclusive: capping at exactly a row's cost admits it.
        let exact = table.row(2, 3).unwrap();
        let s = select_config(
            &table,
            Some(exact.params),
            Some(exact.macs_per_s),
            Preference::Depth,
        )
        .unwrap();
        let got = table.row(s.w, s.d).unwrap();
        assert!(got.params <= exact.params && got.macs_per_s <= exact.macs_per_s);

        // macs budget alone also filters.
        let tight_macs = table.row(1, 1).unwrap().macs_per_s;
        let s = select_config(&table, None, Some(tight_macs), Preference::Width).unwrap();
        assert_eq!(s, SubnetConfig::new(1, 1));
    }

    #[test]
    fn impossible_budget_reports_the_minimum_cost() {
        let table = enumerate_costs(&ModelConfig::desk()).unwrap();
        let min = table.row(1, 1).unwrap();
        match select_config(&table, Some(10), None, Preference::Depth) {
            Err(Error::BudgetTooSmall {
                min_params,
                min_macs,
            }) => {
                assert_eq!(min_params, min.params);
                assert_eq!(min_macs, min.macs_per_s);
            }
            other => panic!("expected BudgetTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn extraction_matches_the_full_model_bit_for_bit() {
        let config = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let params = FullModelParams::init(config.clone(), &mut rng).unwrap();
        let mix = random_spec(config.bins(), 5, &mut rng);
        for w in 1..=config.max_width {
            for d in 1..=config.max_depth {
                let subnet = SubnetConfig::new(w, d);
                let full_out = params.separate(&mix, subnet).unwrap();
                let extracted = extract_subnet(&params, subnet).unwrap();
                assert_eq!(extracted.config.max_width, w);
                assert_eq!(extracted.config.max_depth, d);
                let ex_out = extracted
                    .separate(&mix, SubnetConfig::full(&extracted.config))
                    .unwrap();
                assert_eq!(full_out.channel_re(0), ex_out.channel_re(0), "re ({w},{d})");
                assert_eq!(full_out.channel_im(0), ex_out.channel_im(0), "im ({w},{d})");
            }
        }
    }

    #[test]
    fn extraction_is_idempotent_and_nests() {
        let config = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let params = FullModelParams::init(config, &mut rng).unwrap();
        let once = extract_subnet(&params, SubnetConfig::new(2, 3)).unwrap();
        let twice = extract_subnet(&once, SubnetConfig::new(2, 3)).unwrap();
        assert_eq!(once, twice);

        // Extracting from an extraction equals extracting directly.
        let nested = extract_subnet(&once, SubnetConfig::new(1, 2)).unwrap();
        let direct = extract_subnet(&params, SubnetConfig::new(1, 2)).unwrap();
        assert_eq!(nested, direct);

        // Asking an extraction for more than it kept is an error.
        assert!(extract_subnet(&once, SubnetConfig::new(3, 1)).is_err());
    }

    #[test]
    fn extracted_param_tensors_match_the_cost_model() {
        let config = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let params = FullModelParams::init(config.clone(), &mut rng).unwrap();
        for w in 1..=config.max_width {
            for d in 1..=config.max_depth {
                let subnet = SubnetConfig::new(w, d);
                let extracted = extract_subnet(&params, subnet).unwrap();
                let cost = model_costs_per_second(&config, subnet).unwrap();
                assert_eq!(
                    extracted.total_param_numel(),
                    cost.params,
                    "stored tensors vs cost model at ({w},{d})"
                );
            }
        }
    }
}
