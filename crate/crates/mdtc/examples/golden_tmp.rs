use mdtc::infomath::*;
use mdtc::synth::ProcessSpec;

fn mixing_trans(v: usize, stay: f64) -> Vec<Vec<f64>> {
    let off = (1.0 - stay) / (v - 1) as f64;
    (0..v).map(|i| (0..v).map(|j| if i == j { stay } else { off }).collect()).collect()
}

fn main() {
    // screening claim on stochastic chain
    let spec = ProcessSpec::markov(vec![0.5, 0.3, 0.2], mixing_trans(3, 0.6), 6).unwrap();
    let r = eps_forward_dependence(&spec).unwrap();
    for e in r.table.iter().filter(|e| e.position >= 1 && e.subset == vec![e.position - 1]) {
        println!("i={} S={:?} mi={:.9}", e.position, e.subset, e.mi);
    }
    // deterministic rotation chain: screening should hold exactly
    let rot: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if j == (i + 1) % 3 { 1.0 } else { 0.0 }).collect()).collect();
    let det = ProcessSpec::markov(vec![1.0/3.0; 3], rot, 6).unwrap();
    let r2 = eps_forward_dependence(&det).unwrap();
    let max_screened = r2.table.iter()
        .filter(|e| e.position >= 1 && e.subset.contains(&(e.position - 1)))
        .map(|e| e.mi).fold(0.0f64, f64::max);
    println!("rotation chain: max MI with i-1 in S = {max_screened:.3e}");

    // goldens
    let noisy1 = ProcessSpec::noisy_chain(vec![1.0/3.0;3], mixing_trans(3, 0.7), 0.1, 6).unwrap();
    let eps = eps_forward_dependence(&noisy1).unwrap();
    println!("GOLDEN_EPS_N6 = {:.15e} (argmax i={} S={:?})", eps.eps, eps.argmax_position, eps.argmax_subset);
    let noisy2 = ProcessSpec::noisy_chain(vec![1.0/3.0;3], mixing_trans(3, 0.7), 0.2, 6).unwrap();
    let gap = expected_kl_gap(&noisy2, 0.5, 3).unwrap();
    println!("GOLDEN_GAP_N6 = {:.15e}", gap);
}
