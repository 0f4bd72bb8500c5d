use serde::{Deserialize, Serialize};

use super::heads::{on_simplex, LinearHeads};
use super::{hard_gdro_step, soft_gdro_step, GroupLossEstimate, GroupWeights, MitigateError};
use crate::linalg::Matrix;
use crate::subgroup::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Erm,
    Gdro,
    SoftGdro,
    Di,
    SoftDi,
}

impl TrainMethod {
    pub const ALL: [TrainMethod; 5] =
        [TrainMethod::Erm, TrainMethod::Gdro, TrainMethod::SoftGdro, TrainMethod::Di, TrainMethod::SoftDi];

    pub fn name(self) -> &'static str {
        match self {
            TrainMethod::Erm => "erm",
            TrainMethod::Gdro => "gdro",
            TrainMethod::SoftGdro => "soft_gdro",
            TrainMethod::Di => "di",
            TrainMethod::SoftDi => "soft_di",
        }
    }

    pub fn needs_groups(self) -> bool {
        self != TrainMethod::Erm
    }
}

impl std::str::FromStr for TrainMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?} (expected erm, gdro, soft_gdro, di or soft_di)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub eta_q: f64,
    pub estimate: GroupLossEstimate,
    /// Keep q and the robust loss of every epoch.
    pub record_trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.1, epochs: 500, eta_q: 1.0, estimate: GroupLossEstimate::Conditional, record_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub q: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: LinearHeads,
    pub method: TrainMethod,
    pub trace: Vec<StepTrace>,
    /// Objective at the last epoch (before its update).
    pub final_loss: f64,
    /// Gradient norm at the last epoch; large values mean training had not
    /// settled when the epoch budget ran out.
    pub final_grad_norm: f64,
}

/// Full-batch gradient descent from zero weights.
///
/// `groups` (N×K) is required for every method but ERM. The group-DRO
/// methods treat its columns as groups; the DI methods grow one head per
/// column. `gdro` and `di` use the argmax of each row as a hard membership,
/// the soft variants use the rows as given (each must lie on the simplex).
pub fn train(
    x: &Matrix,
    y: &[usize],
    classes: usize,
    groups: Option<&Matrix>,
    method: TrainMethod,
    cfg: &TrainConfig,
) -> Result<Trained, MitigateError> {
    let n = x.rows();
    if n == 0 || y.len() != n {
        return Err(MitigateError::InvalidArgument(format!("{n} rows but {} labels", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
        return Err(MitigateError::InvalidArgument(format!("label {bad} out of range 0..{classes}")));
    }
    if !(cfg.lr > 0.0) || !(cfg.eta_q > 0.0) {
        return Err(MitigateError::InvalidArgument("lr and eta_q must be positive".into()));
    }
    let groups = match (method.needs_groups(), groups) {
        (false, _) => None,
        (true, None) => {
            return Err(MitigateError::InvalidArgument(format!("method {} needs group labels", method.name())))
        }
        (true, Some(g)) => {
            if g.rows() != n || g.cols() == 0 {
                return Err(MitigateError::InvalidArgument(format!(
                    "group labels are {}x{}, expected {n} rows",
                    g.rows(),
                    g.cols()
                )));
            }
            if let Some(row) = g.iter_rows().position(|r| !on_simplex(r, g.cols())) {
                return Err(MitigateError::InvalidSoftLabel { row });
            }
            Some(g)
        }
    };
    let k = groups.map_or(1, Matrix::cols);
    let hard_ids: Option<Vec<usize>> = groups.map(|g| g.iter_rows().map(argmax).collect());
    let one_hot = match (method, &hard_ids) {
        (TrainMethod::Di, Some(ids)) => {
            let mut m = Matrix::zeros(n, k);
            for (i, &gid) in ids.iter().enumerate() {
                m[(i, gid)] = 1.0;
            }
            Some(m)
        }
        _ => None,
    };
    let mix = match method {
        TrainMethod::Di => one_hot.as_ref(),
        TrainMethod::SoftDi => groups,
        _ => None,
    };
    let heads = if mix.is_some() { k } else { 1 };
    let mut model = LinearHeads::zeros(heads, x.cols(), classes);
    let mut q = GroupWeights::uniform(k, cfg.eta_q);
    let uniform = vec![1.0 / n as f64; n];
    let mut trace = Vec::new();
    let mut final_loss = f64::NAN;
    let mut final_grad_norm = f64::NAN;
    for epoch in 0..cfg.epochs {
        let fwd = model.forward(x, y, mix);
        let (weights, loss) = match method {
            TrainMethod::Gdro => {
                let s = hard_gdro_step(&mut q, &fwd.losses, hard_ids.as_deref().expect("groups checked"))?;
                (s.sample_weights, s.robust_loss)
            }
            TrainMethod::SoftGdro => {
                let s = soft_gdro_step(&mut q, &fwd.losses, groups.expect("groups checked"), cfg.estimate)?;
                (s.sample_weights, s.robust_loss)
            }
            _ => {
                let l = fwd.losses.iter().sum::<f64>() / n as f64;
                (uniform.clone(), l)
            }
        };
        if !loss.is_finite() {
            return Err(MitigateError::Diverged { epoch });
        }
        if cfg.record_trace {
            trace.push(StepTrace { q: q.q.clone(), loss });
        }
        let (gw, gb) = model.backward(&fwd, x, y, mix, &weights);
        if epoch + 1 == cfg.epochs {
            final_loss = loss;
            final_grad_norm = gw
                .iter()
                .flat_map(|m| m.as_slice().iter())
                .chain(gb.iter().flatten())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
        }
        model.step(&gw, &gb, cfg.lr);
    }
    Ok(Trained { model, method, trace, final_loss, final_grad_norm })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub class: u32,
    pub subgroup: u32,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall_acc: f64,
    /// Per-subgroup accuracies, worst first.
    pub worst: Vec<f64>,
    pub per_subgroup: Vec<GroupAccuracy>,
}

impl Metrics {
    pub fn worst_group(&self) -> f64 {
        self.worst.first().copied().unwrap_or(f64::NAN)
    }
}

/// Accuracy overall and per (class, ground-truth subgroup); rows without a
/// subgroup annotation only count towards the overall figure.
pub fn evaluate(model: &LinearHeads, x: &Matrix, y: &[usize], gt: &[Option<u32>], subgroups: u32) -> Metrics {
    let classes = model.num_classes();
    let cells = classes * subgroups as usize;
    let mut hit = vec![0usize; cells];
    let mut count = vec![0usize; cells];
    let mut correct = 0;
    for (i, row) in x.iter_rows().enumerate() {
        let ok = model.predict(row) == y[i];
        correct += ok as usize;
        if let Some(g) = gt[i] {
            let c = y[i] * subgroups as usize + g as usize;
            count[c] += 1;
            hit[c] += ok as usize;
        }
    }
    let per_subgroup: Vec<GroupAccuracy> = (0..cells)
        .filter(|&c| count[c] > 0)
        .map(|c| GroupAccuracy {
            class: (c / subgroups as usize) as u32,
            subgroup: (c % subgroups as usize) as u32,
            count: count[c],
            accuracy: hit[c] as f64 / count[c] as f64,
        })
        .collect();
    let mut worst: Vec<f64> = per_subgroup.iter().map(|g| g.accuracy).collect();
    worst.sort_by(f64::total_cmp);
    Metrics {
        overall_acc: if y.is_empty() { 0.0 } else { correct as f64 / y.len() as f64 },
        worst,
        per_subgroup,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShift64Star;

    fn separable(seed: u64, n: usize) -> (Matrix, Vec<usize>) {
        let mut rng = XorShift64Star::new(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let s = if c == 0 { 1.0 } else { -1.0 };
            data.push(s * (0.5 + rng.uniform()));
            data.push(rng.normal());
            y.push(c);
        }
        (Matrix::from_vec(n, 2, data).unwrap(), y)
    }

    #[test]
    fn erm_separates_separable_data() {
        let (x, y) = separable(1, 200);
        let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
        let t = train(&x, &y, 2, None, TrainMethod::Erm, &cfg).unwrap();
        let (xt, yt) = separable(2, 200);
        let m = evaluate(&t.model, &xt, &yt, &vec![None; 200], 1);
        assert_eq!(m.overall_acc, 1.0);
    }

    #[test]
    fn identical_groups_reduce_to_erm() {
        let (x, y) = separable(3, 100);
        let g = Matrix::from_vec(100, 3, vec![1.0 / 3.0; 300]).unwrap();
        let cfg = TrainConfig::default();
        let erm = train(&x, &y, 2, None, TrainMethod::Erm, &cfg).unwrap();
        let sg = train(&x, &y, 2, Some(&g), TrainMethod::SoftGdro, &cfg).unwrap();
        for (a, b) in erm.model.params().iter().zip(sg.model.params()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn groups_are_validated() {
        let (x, y) = separable(3, 4);
        let cfg = TrainConfig::default();
        assert!(train(&x, &y, 2, None, TrainMethod::Gdro, &cfg).is_err());
        let bad = Matrix::from_vec(4, 2, vec![0.5, 0.6, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(
            train(&x, &y, 2, Some(&bad), TrainMethod::SoftDi, &cfg).err(),
            Some(MitigateError::InvalidSoftLabel { row: 0 })
        );
    }

    #[test]
    fn method_names_round_trip() {
        for m in TrainMethod::ALL {
            assert_eq!(m.name().parse::<TrainMethod>().unwrap(), m);
        }
    }
}
