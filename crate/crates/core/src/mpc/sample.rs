//! Uniform sampling of a distributed cluster onto the coordinator.

use rand::seq::index::sample as sample_indices;

use super::{Engine, MpcConfig, RoundTrace, Words};
use crate::error::Result;
use crate::rng::RngStream;

enum Msg {
    Count(usize),
    Request(Vec<usize>),
    Points(Vec<Vec<f64>>),
}

impl Words for Msg {
    fn words(&self) -> usize {
        match self {
            Msg::Count(_) => 1,
            Msg::Request(r) => r.len(),
            Msg::Points(p) => p.iter().map(Vec::len).sum(),
        }
    }
}

/// Samples `min(t, |P|)` points of a cluster held across machines
/// (`members[i]` on machine `i`) uniformly without replacement and gathers
/// them on machine 0, in global index order.
pub fn mpc_sample_for_projection(
    members: &[Vec<Vec<f64>>],
    t: usize,
    config: &MpcConfig,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, RoundTrace)> {
    let m = config.machines;
    if members.len() != m {
        return Err(crate::error::Error::param("one member list per machine"));
    }
    let mut engine = Engine::new(config);
    let resident: Vec<usize> = members
        .iter()
        .map(|p| p.iter().map(Vec::len).sum())
        .collect();
    engine.check_resident(&resident)?;

    let out = (0..m)
        .map(|i| vec![(0, Msg::Count(members[i].len()))])
        .collect();
    let inbox = engine.exchange("sample-counts", out)?.swap_remove(0);
    let counts: Vec<usize> = inbox
        .into_iter()
        .map(|(_, msg)| if let Msg::Count(c) = msg { c } else { 0 })
        .collect();
    let total: usize = counts.iter().sum();

    let mut chosen: Vec<usize> = if t >= total {
        (0..total).collect()
    } else {
        let mut rng = RngStream::new(seed, "mpc_sample").rng();
        sample_indices(&mut rng, total, t).into_vec()
    };
    chosen.sort_unstable();
    let mut requests: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut offset = 0;
    let mut it = chosen.iter().peekable();
    for (i, &c) in counts.iter().enumerate() {
        while let Some(&&g) = it.peek() {
            if g >= offset + c {
                break;
            }
            requests[i].push(g - offset);
            it.next();
        }
        offset += c;
    }
    let mut out: Vec<Vec<(usize, Msg)>> = (0..m).map(|_| Vec::new()).collect();
    for (i, r) in requests.into_iter().enumerate() {
        out[0].push((i, Msg::Request(r)));
    }
    let inboxes = engine.exchange("sample-request", out)?;

    let mut out: Vec<Vec<(usize, Msg)>> = (0..m).map(|_| Vec::new()).collect();
    for (i, inbox) in inboxes.into_iter().enumerate() {
        for (_, msg) in inbox {
            if let Msg::Request(r) = msg {
                out[i].push((
                    0,
                    Msg::Points(r.iter().map(|&j| members[i][j].clone()).collect()),
                ));
            }
        }
    }
    let inbox = engine.exchange("sample-ship", out)?.swap_remove(0);
    let omega: Vec<Vec<f64>> = inbox
        .into_iter()
        .flat_map(|(_, msg)| {
            if let Msg::Points(p) = msg {
                p
            } else {
                Vec::new()
            }
        })
        .collect();
    let mut resident = resident;
    resident[0] += omega.iter().map(Vec::len).sum::<usize>();
    engine.check_resident(&resident)?;
    Ok((omega, engine.trace))
}
