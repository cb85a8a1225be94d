mod support;

use aquabot_core::dialogue::MemoryBank;
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
fn random_instances() {
    let mut rng = StdRng::seed_from_u64(5);
    for i in 0..500 {
        if let Err(e) = support::attention_case(&mut rng) {
            panic!("case {i}: {e}");
        }
    }
}

#[test]
fn extreme_scores_stay_normalised() {
    let mut rng = StdRng::seed_from_u64(6);
    let mut p = support::random_policy(&mut rng, 4, 2);
    for t in [&mut p.net.m_q, &mut p.net.m_k] {
        for v in t.data.iter_mut() {
            *v *= 1e3;
        }
    }
    let mut bank = MemoryBank::new(20);
    for k in 0..10 {
        bank.push(vec![k as f64, -(k as f64), 1.0, 0.5]);
    }
    let a = p.attend_memory(&[3.0, -2.0, 1.0, 4.0], &bank);
    assert!(a.probs.iter().all(|x| x.is_finite() && *x >= 0.0));
    assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn bank_is_fifo() {
    let mut bank = MemoryBank::new(3);
    for k in 0..5 {
        bank.push(vec![k as f64]);
    }
    let left: Vec<f64> = bank.iter().map(|v| v[0]).collect();
    assert_eq!(left, [2.0, 3.0, 4.0]);
    bank.clear();
    assert!(bank.is_empty());
    let mut none = MemoryBank::new(0);
    none.push(vec![1.0]);
    assert!(none.is_empty());
}
