use super::{Algorithm, EcosystemGraph, RiskError, ScoreConfig, ScoreKind, ScoreVector};

#[derive(Debug, Clone, PartialEq)]
pub struct EhitsScores {
    pub hub: ScoreVector,
    pub authority: ScoreVector,
    /// `hub[v] + authority[v]`.
    pub risk: ScoreVector,
}

/// Edge-weighted HITS.
///
/// Each sweep sets `hub[v] = sum_{v->u} authority[u] * w(v,u) / maxOutDegree`,
/// then `authority[v] = sum_{u->v} hub[u] * w(u,v) / maxInDegree` using the
/// hub values of the same sweep, then L1-normalizes both vectors. Both start
/// at 1. Stops when neither vector moves by more than `epsilon` (L-inf).
pub fn ehits(graph: &EcosystemGraph, config: &ScoreConfig) -> Result<EhitsScores, RiskError> {
    config.validate()?;
    if config.algorithm != Algorithm::Ehits {
        return Err(RiskError::WrongAlgorithm(config.algorithm));
    }
    let n = graph.node_count();
    if n == 0 {
        return Err(RiskError::EmptyGraph);
    }
    let channel = config.channel;
    if !graph.edges().iter().any(|e| e.weight(channel) > 0.0) {
        return Err(RiskError::NoSignal(channel.as_str()));
    }

    let max_out = (0..n).map(|v| graph.out_edges(v).len()).max().unwrap_or(0).max(1) as f64;
    let max_in = (0..n).map(|v| graph.in_edges(v).len()).max().unwrap_or(0).max(1) as f64;

    let mut hub = vec![1.0; n];
    let mut authority = vec![1.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations {
        let new_hub: Vec<f64> = (0..n)
            .map(|v| {
                graph
                    .out_edges(v)
                    .iter()
                    .map(|&e| {
                        let edge = graph.edge(e);
                        authority[edge.target] * edge.weight(channel) / max_out
                    })
                    .sum()
            })
            .collect();
        let new_hub = l1_normalized(new_hub);
        let new_authority: Vec<f64> = (0..n)
            .map(|v| {
                graph
                    .in_edges(v)
                    .iter()
                    .map(|&e| {
                        let edge = graph.edge(e);
                        new_hub[edge.source] * edge.weight(channel) / max_in
                    })
                    .sum()
            })
            .collect();
        let new_authority = l1_normalized(new_authority);
        iterations += 1;

        let delta = linf(&hub, &new_hub).max(linf(&authority, &new_authority));
        hub = new_hub;
        authority = new_authority;
        if delta <= config.epsilon {
            converged = true;
            break;
        }
    }

    let risk: Vec<f64> = hub.iter().zip(&authority).map(|(h, a)| h + a).collect();
    let make = |values: &[f64], kind| {
        ScoreVector::from_dense(graph, values, kind, channel, iterations, converged)
    };
    Ok(EhitsScores {
        hub: make(&hub, ScoreKind::EhitsHub),
        authority: make(&authority, ScoreKind::EhitsAuthority),
        risk: make(&risk, ScoreKind::Ehits),
    })
}

fn l1_normalized(mut values: Vec<f64>) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v /= total);
    }
    values
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
