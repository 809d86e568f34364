use super::loss::LossKind;
use super::trainer::{mean_loss, TrainConfig, Trainer};
use crate::error::Result;
use crate::neural::init_params;
use crate::sequencer::{make_batches, Dataset, SampleIndex, SampleRef};

#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    pub learning_rates: Vec<f64>,
    pub neurons: Vec<usize>,
    /// `cells[row = neurons][col = learning rate]`: best validation MAPE or
    /// the error that stopped the cell.
    pub cells: Vec<Vec<std::result::Result<f64, String>>>,
}

impl GridTable {
    pub fn cell(&self, neurons: usize, lr: f64) -> Option<&std::result::Result<f64, String>> {
        let r = self.neurons.iter().position(|&n| n == neurons)?;
        let c = self.learning_rates.iter().position(|&l| l == lr)?;
        Some(&self.cells[r][c])
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("neurons");
        for lr in &self.learning_rates {
            s.push_str(&format!("\tlr={lr}"));
        }
        s.push('\n');
        for (n, row) in self.neurons.iter().zip(&self.cells) {
            s.push_str(&n.to_string());
            for c in row {
                match c {
                    Ok(v) => s.push_str(&format!("\t{v:.4}")),
                    Err(e) => s.push_str(&format!("\terror: {e}")),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Train one cell for `budget` samples, checking validation MAPE every
/// `check_every` samples and at the end; returns the best check.
fn run_cell(
    train: &Dataset,
    index: &SampleIndex,
    val: &Dataset,
    val_refs: &[SampleRef],
    config: &TrainConfig,
    budget: usize,
    check_every: usize,
) -> Result<f64> {
    let init = init_params(train.feature_count, config.neurons, config.seed, config.peephole);
    let mut trainer = Trainer::new(init, config);
    let check = |t: &Trainer| mean_loss(&t.params, val, val_refs, LossKind::Mape, config.mape_floor, config.chunk_size);
    let mut best = f64::INFINITY;
    let mut seen = 0usize;
    let mut since_check = 0usize;
    let mut batch_id = 0usize;
    let mut epoch = 1u64;
    'outer: while seen < budget {
        for batch in make_batches(index.len(), config.batch_size, config.seed, epoch) {
            let take = batch.len().min(budget - seen);
            let refs: Vec<SampleRef> = batch[..take].iter().map(|&i| index.refs[i as usize]).collect();
            trainer.run_batch(train, &refs, config.learning_rate, batch_id)?;
            batch_id += 1;
            seen += take;
            since_check += take;
            if since_check >= check_every {
                best = best.min(check(&trainer)?);
                since_check = 0;
            }
            if seen >= budget {
                break 'outer;
            }
        }
        epoch += 1;
    }
    if since_check > 0 || !best.is_finite() {
        best = best.min(check(&trainer)?);
    }
    Ok(best)
}

/// Best validation MAPE for each (neurons, learning rate) cell. A failing
/// cell records its error and the search continues.
pub fn grid_search(
    train: &Dataset,
    val: &Dataset,
    learning_rates: &[f64],
    neurons: &[usize],
    budget: usize,
    check_every: usize,
    base: &TrainConfig,
) -> Result<GridTable> {
    base.validate()?;
    let index = train.index().strided(base.train_stride, 0);
    let val_index = val.index().strided(base.val_stride, 0);
    let mut cells = Vec::with_capacity(neurons.len());
    for &n in neurons {
        let mut row = Vec::with_capacity(learning_rates.len());
        for &lr in learning_rates {
            let cfg = TrainConfig {
                neurons: n,
                learning_rate: lr,
                ..base.clone()
            };
            let r = run_cell(train, &index, val, &val_index.refs, &cfg, budget, check_every.max(1));
            if let Err(e) = &r {
                log::warn!("grid cell N={n} lr={lr} failed: {e}");
            }
            row.push(r.map_err(|e| e.to_string()));
        }
        cells.push(row);
    }
    Ok(GridTable {
        learning_rates: learning_rates.to_vec(),
        neurons: neurons.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::trainer::tests::constant_day;

    #[test]
    fn one_by_one_grid() {
        let train = Dataset::new(vec![constant_day(80, 2, 1)], 4).unwrap();
        let val = Dataset::new(vec![constant_day(30, 2, 2)], 4).unwrap();
        let base = TrainConfig {
            batch_size: 16,
            chunk_size: 8,
            ..TrainConfig::new(LossKind::Mse)
        };
        let t = grid_search(&train, &val, &[0.01], &[3], 100, 50, &base).unwrap();
        assert_eq!(t.cells.len(), 1);
        assert_eq!(t.cells[0].len(), 1);
        assert!(t.cell(3, 0.01).unwrap().as_ref().unwrap().is_finite());
        assert_eq!(t.to_tsv().lines().count(), 2);
    }
}
