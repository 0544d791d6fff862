//! Browser bindings. Every export takes plain arguments and returns a JSON
//! string, so the page needs no glue beyond `JSON.parse`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use edgemig::agents::{AlwaysMigrate, GaConfig, GaPolicy, NeverMigrate, Policy};
use edgemig::allocator::{objective, optimal_allocation, proportional_allocation, AllocationRequest};
use edgemig::delay::DelayParams;
use edgemig::env::{EnvConfig, Environment};
use edgemig::topology::{hop_distance, Connectivity, NodeId, Topology};
use edgemig::traces::{synthetic_traces, MobilityModel, SyntheticSpec};

#[derive(Debug, Serialize)]
pub struct AllocationView {
    pub optimal: Vec<f64>,
    pub proportional: Vec<f64>,
    pub optimal_delay_s: f64,
    pub proportional_delay_s: f64,
}

/// Split one server between tasks of the given cycle demands (gigacycles).
pub fn allocation(gigacycles: &[f64]) -> Result<AllocationView, String> {
    if gigacycles.is_empty() {
        return Err("enter at least one demand".into());
    }
    let req = AllocationRequest::new(gigacycles.iter().map(|g| g * 1e9).collect())
        .map_err(|e| e.to_string())?;
    let f = DelayParams::default().server_capacity;
    let opt = optimal_allocation(&req).map_err(|e| e.to_string())?;
    let prop = proportional_allocation(&req).map_err(|e| e.to_string())?;
    Ok(AllocationView {
        optimal_delay_s: objective(&req, &opt, f).map_err(|e| e.to_string())?,
        proportional_delay_s: objective(&req, &prop, f).map_err(|e| e.to_string())?,
        optimal: opt.proportions,
        proportional: prop.proportions,
    })
}

#[derive(Debug, Serialize)]
pub struct HopView {
    pub rows: usize,
    pub cols: usize,
    pub hops: Vec<u32>,
    pub links: Vec<(usize, usize)>,
}

/// Hop counts from `from` to every node, plus the link list.
pub fn hops(rows: usize, cols: usize, connectivity: &str, from: usize) -> Result<HopView, String> {
    let kind: Connectivity = connectivity.parse().map_err(|e: edgemig::Error| e.to_string())?;
    let t = Topology::grid(rows, cols, 1000.0 * rows.max(cols) as f64, kind)
        .map_err(|e| e.to_string())?;
    if from >= t.len() {
        return Err(format!("node {from} out of range"));
    }
    let hops = t
        .node_ids()
        .map(|n| hop_distance(&t, NodeId(from), n))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let links = t
        .node_ids()
        .flat_map(|a| {
            t.neighbors(a)
                .iter()
                .filter(move |&&b| b > a.0)
                .map(move |&b| (a.0, b))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(HopView {
        rows,
        cols,
        hops,
        links,
    })
}

#[derive(Debug, Serialize)]
pub struct EpisodeView {
    pub policy: String,
    pub slot_delay_s: Vec<f64>,
    pub migrations: usize,
    pub mean_delay_s: f64,
}

/// One episode on a 2x2 grid under each baseline policy.
pub fn episodes(n_vehicles: usize, slots: usize, speed: f64, seed: u64) -> Result<Vec<EpisodeView>, String> {
    let err = |e: edgemig::Error| e.to_string();
    let topo = Topology::grid(2, 2, 2000.0, Connectivity::High).map_err(err)?;
    let traces = synthetic_traces(&SyntheticSpec {
        model: MobilityModel::RandomWaypoint,
        n_vehicles,
        slots,
        region_side: 2000.0,
        speed,
        slot_seconds: 60.0,
        seed,
    })
    .map_err(err)?;
    let ga = GaConfig {
        population: 20,
        generations: 10,
        ..GaConfig::default()
    };
    let policies: Vec<(&str, Box<dyn Policy>)> = vec![
        ("am", Box::new(AlwaysMigrate)),
        ("nm", Box::new(NeverMigrate)),
        ("ga", Box::new(GaPolicy::new(ga, seed))),
    ];
    let mut out = Vec::new();
    for (name, mut policy) in policies {
        let mut env = Environment::new(EnvConfig::new(topo.clone(), n_vehicles, slots, seed), &traces)
            .map_err(err)?;
        let mut state = env.reset();
        let (mut delays, mut migrations) = (Vec::new(), 0);
        while !env.is_done(&state) {
            let d = policy.decide(&env, &state).map_err(err)?;
            let step = env.step(&state, &d.nodes).map_err(err)?;
            delays.push(-step.reward);
            migrations += step.evaluation.migrations;
            state = step.state;
        }
        out.push(EpisodeView {
            policy: name.into(),
            mean_delay_s: delays.iter().sum::<f64>() / delays.len() as f64,
            slot_delay_s: delays,
            migrations,
        });
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = allocationJson)]
pub fn allocation_json(gigacycles: Vec<f64>) -> Result<String, JsValue> {
    to_js(allocation(&gigacycles))
}

#[wasm_bindgen(js_name = hopsJson)]
pub fn hops_json(rows: usize, cols: usize, connectivity: &str, from: usize) -> Result<String, JsValue> {
    to_js(hops(rows, cols, connectivity, from))
}

#[wasm_bindgen(js_name = episodesJson)]
pub fn episodes_json(n_vehicles: usize, slots: usize, speed: f64, seed: u32) -> Result<String, JsValue> {
    to_js(episodes(n_vehicles, slots, speed, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_favours_square_root_split() {
        let v = allocation(&[1.0, 4.0]).unwrap();
        assert!((v.optimal[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((v.proportional[0] - 0.2).abs() < 1e-12);
        assert!(v.optimal_delay_s < v.proportional_delay_s);
        assert!(allocation(&[]).is_err());
    }

    #[test]
    fn hop_view_on_small_grid() {
        let v = hops(2, 3, "high", 0).unwrap();
        assert_eq!(v.hops, vec![0, 1, 2, 1, 2, 3]);
        assert_eq!(v.links.len(), 7);
        assert!(hops(2, 2, "mesh", 0).is_err());
        assert!(hops(2, 2, "high", 9).is_err());
    }

    #[test]
    fn episodes_cover_all_baselines() {
        let v = episodes(4, 6, 5.0, 1).unwrap();
        let names: Vec<&str> = v.iter().map(|e| e.policy.as_str()).collect();
        assert_eq!(names, ["am", "nm", "ga"]);
        assert!(v.iter().all(|e| e.slot_delay_s.len() == 6));
        assert_eq!(v[1].migrations, 0);
        assert!(serde_json::to_string(&v).unwrap().contains("\"policy\":\"ga\""));
    }
}
