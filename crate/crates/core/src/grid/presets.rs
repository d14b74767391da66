//! Shipped network reconstructions: a two-area four-machine system (KTAS) and
//! a Kron-reduced IEEE 39-bus system. Per-machine constants follow the
//! standard published datasets where available; everything is overridable
//! through the JSON network files these functions can export.

use nalgebra::DMatrix;

use super::{kron_reduce, GeneratorParams, LoadParams, Network};

/// Two-area four-machine test system, reduced to 6 nodes: generators 0..3,
/// load centers 4 (area one) and 5 (area two), single inter-area tie (4, 5).
pub fn ktas() -> Network {
    let n = 6;
    let mut b = DMatrix::zeros(n, n);
    let mut link = |i: usize, j: usize, w: f64| {
        b[(i, j)] = w;
        b[(j, i)] = w;
    };
    link(0, 4, 8.0);
    link(1, 4, 8.0);
    link(0, 1, 1.0);
    link(2, 5, 8.0);
    link(3, 5, 8.0);
    link(2, 3, 1.0);
    link(4, 5, 2.5);
    for i in 0..n {
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)]).sum();
        b[(i, i)] = -s;
    }

    let base_loads = [0.967, 1.767];
    let total_base: f64 = base_loads.iter().sum();
    let p_max = 1.25;
    let share = total_base / (4.0 * p_max);

    let generators = (0..4)
        .map(|_| GeneratorParams {
            droop_a: 0.05,
            transient_time_s: 6.0,
            reactance_x: 0.03,
            field_voltage_ef: 1.0,
            p_max,
            inertia_m: 0.031,
            p_equilibrium: p_max * share,
            colocated_load: None,
            n1_exempt: false,
        })
        .collect();
    let loads = base_loads
        .iter()
        .map(|&base| LoadParams {
            p_total_tl: 2.2 * base,
            p_equilibrium_base: base,
            transient_time_s: 5.0,
            reactance_x: 0.01,
            field_voltage_ef: 1.0,
        })
        .collect();

    Network {
        name: "ktas".into(),
        n_gen: 4,
        n_load: 2,
        susceptance_b: b,
        damping_d: 0.05,
        governor_deadband_w: 0.1,
        generators,
        loads,
        interconnectors: vec![(4, 5)],
        line_threshold_pphi: 1.4,
        reference_node: 0,
    }
}

/// IEEE 39-bus line reactances (from, to, x) on the standard 100 MVA base.
const IEEE39_BRANCHES: [(usize, usize, f64); 46] = [
    (1, 2, 0.0411),
    (1, 39, 0.0250),
    (2, 3, 0.0151),
    (2, 25, 0.0086),
    (2, 30, 0.0181),
    (3, 4, 0.0213),
    (3, 18, 0.0133),
    (4, 5, 0.0128),
    (4, 14, 0.0129),
    (5, 6, 0.0026),
    (5, 8, 0.0112),
    (6, 7, 0.0092),
    (6, 11, 0.0082),
    (6, 31, 0.0250),
    (7, 8, 0.0046),
    (8, 9, 0.0363),
    (9, 39, 0.0250),
    (10, 11, 0.0043),
    (10, 13, 0.0043),
    (10, 32, 0.0200),
    (12, 11, 0.0435),
    (12, 13, 0.0435),
    (13, 14, 0.0101),
    (14, 15, 0.0217),
    (15, 16, 0.0094),
    (16, 17, 0.0089),
    (16, 19, 0.0195),
    (16, 21, 0.0135),
    (16, 24, 0.0059),
    (17, 18, 0.0082),
    (17, 27, 0.0173),
    (19, 20, 0.0138),
    (19, 33, 0.0142),
    (20, 34, 0.0180),
    (21, 22, 0.0140),
    (22, 23, 0.0096),
    (22, 35, 0.0143),
    (23, 24, 0.0350),
    (23, 36, 0.0272),
    (25, 26, 0.0323),
    (25, 37, 0.0232),
    (26, 27, 0.0147),
    (26, 28, 0.0474),
    (26, 29, 0.0625),
    (28, 29, 0.0151),
    (29, 38, 0.0156),
];

/// Lines whose removal splits the 39-bus grid into its three coherent areas.
const IEEE39_AREA_CUTS: [(usize, usize); 4] = [(1, 39), (3, 4), (14, 15), (16, 17)];

const IEEE39_LOAD_BUSES: [usize; 17] =
    [3, 4, 7, 8, 12, 15, 16, 18, 20, 21, 23, 24, 25, 26, 27, 28, 29];

/// (bus, MW) loads from the standard dataset; buses 31 and 39 sit at
/// generator nodes.
const IEEE39_LOAD_MW: [(usize, f64); 19] = [
    (3, 322.0),
    (4, 500.0),
    (7, 233.8),
    (8, 522.0),
    (12, 8.5),
    (15, 320.0),
    (16, 329.4),
    (18, 158.0),
    (20, 680.0),
    (21, 274.0),
    (23, 247.5),
    (24, 308.6),
    (25, 224.0),
    (26, 139.0),
    (27, 281.0),
    (28, 206.0),
    (29, 283.5),
    (31, 9.2),
    (39, 1104.0),
];

const IEEE39_H: [f64; 10] = [42.0, 30.3, 35.8, 28.6, 26.0, 34.8, 26.4, 24.3, 34.5, 500.0];
const IEEE39_TD0: [f64; 10] = [10.2, 6.56, 5.7, 5.69, 5.4, 7.3, 5.66, 6.7, 4.79, 7.0];
const IEEE39_XD: [f64; 10] =
    [0.031, 0.0697, 0.0531, 0.0436, 0.132, 0.05, 0.049, 0.057, 0.057, 0.006];
const IEEE39_PMAX: [f64; 10] = [10.4, 6.46, 7.25, 6.52, 5.08, 6.87, 5.8, 5.64, 8.65, 11.0];

/// Demand scaling from nameplate MW to the simulated p.u. base case.
const IEEE39_BASE_SCALE: f64 = 0.72;
/// P^TL scaling: each bus can connect at most 1.5x its nameplate load.
const IEEE39_TL_SCALE: f64 = 1.5;
/// 2 H / omega_s on a 60 Hz base.
const IEEE39_INERTIA_DIVISOR: f64 = 188.5;

fn ieee39_areas() -> [usize; 39] {
    let mut adjacency = vec![Vec::new(); 40];
    for &(f, t, _) in &IEEE39_BRANCHES {
        let cut = IEEE39_AREA_CUTS
            .iter()
            .any(|&(a, b)| (a, b) == (f, t) || (a, b) == (t, f));
        if !cut {
            adjacency[f].push(t);
            adjacency[t].push(f);
        }
    }
    let mut area = [usize::MAX; 39];
    let mut next_area = 0;
    for start in 1..=39 {
        if area[start - 1] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        while let Some(bus) = stack.pop() {
            if area[bus - 1] != usize::MAX {
                continue;
            }
            area[bus - 1] = next_area;
            stack.extend(adjacency[bus].iter().copied());
        }
        next_area += 1;
    }
    area
}

fn ieee39_load_mw(bus: usize) -> f64 {
    IEEE39_LOAD_MW
        .iter()
        .find(|&&(b, _)| b == bus)
        .map_or(0.0, |&(_, mw)| mw)
}

/// IEEE 39-bus system Kron-reduced to its 10 generator buses (30..39, two of
/// them carrying co-located loads) and 17 load buses; 12 inter-area lines
/// survive the reduction as interconnectors. Generator node 9 aggregates the
/// external interconnection behind bus 39 and is exempt from N-1 sweeps.
pub fn ieee39() -> Network {
    let mut b_full = DMatrix::zeros(39, 39);
    for &(f, t, x) in &IEEE39_BRANCHES {
        let w = 1.0 / x;
        let (i, j) = (f - 1, t - 1);
        b_full[(i, j)] += w;
        b_full[(j, i)] += w;
        b_full[(i, i)] -= w;
        b_full[(j, j)] -= w;
    }

    let gen_buses: Vec<usize> = (30..=39).collect();
    let retained: Vec<usize> = gen_buses
        .iter()
        .chain(IEEE39_LOAD_BUSES.iter())
        .map(|&bus| bus - 1)
        .collect();
    let b = kron_reduce(&b_full, &retained).expect("39-bus junction block is invertible");

    let area = ieee39_areas();
    let node_area: Vec<usize> = gen_buses
        .iter()
        .chain(IEEE39_LOAD_BUSES.iter())
        .map(|&bus| area[bus - 1])
        .collect();
    let n = retained.len();
    let mut interconnectors = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if node_area[i] != node_area[j] && b[(i, j)] > 1e-9 {
                interconnectors.push((i, j));
            }
        }
    }

    let total_pmax: f64 = IEEE39_PMAX.iter().sum();
    let total_base: f64 = IEEE39_LOAD_MW
        .iter()
        .map(|&(_, mw)| mw / 100.0 * IEEE39_BASE_SCALE)
        .sum();
    let share = total_base / total_pmax;

    let generators: Vec<GeneratorParams> = (0..10)
        .map(|k| {
            let bus = 30 + k;
            let mw = ieee39_load_mw(bus);
            let colocated_load = (mw > 0.0).then(|| LoadParams {
                p_total_tl: mw / 100.0 * IEEE39_TL_SCALE,
                p_equilibrium_base: mw / 100.0 * IEEE39_BASE_SCALE,
                transient_time_s: IEEE39_TD0[k],
                reactance_x: IEEE39_XD[k],
                field_voltage_ef: 1.0,
            });
            GeneratorParams {
                droop_a: 0.06 * IEEE39_PMAX[k],
                transient_time_s: IEEE39_TD0[k],
                reactance_x: IEEE39_XD[k],
                field_voltage_ef: 1.0,
                p_max: IEEE39_PMAX[k],
                inertia_m: IEEE39_H[k] / IEEE39_INERTIA_DIVISOR,
                p_equilibrium: IEEE39_PMAX[k] * share,
                colocated_load,
                n1_exempt: bus == 39,
            }
        })
        .collect();

    let loads: Vec<LoadParams> = IEEE39_LOAD_BUSES
        .iter()
        .map(|&bus| {
            let mw = ieee39_load_mw(bus);
            LoadParams {
                p_total_tl: mw / 100.0 * IEEE39_TL_SCALE,
                p_equilibrium_base: mw / 100.0 * IEEE39_BASE_SCALE,
                transient_time_s: 5.0,
                reactance_x: 0.001,
                field_voltage_ef: 1.0,
            }
        })
        .collect();

    Network {
        name: "ieee39".into(),
        n_gen: 10,
        n_load: 17,
        susceptance_b: b,
        damping_d: 0.8,
        governor_deadband_w: 0.1,
        generators,
        loads,
        interconnectors,
        line_threshold_pphi: 5.3,
        reference_node: 9,
    }
}
