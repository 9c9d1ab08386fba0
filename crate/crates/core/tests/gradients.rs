use dsdenoise::corpus::Instance;
use dsdenoise::featurize::{EmbeddingDims, EmbeddingTable, SentenceIndex};
use dsdenoise::seeds::seeded_rng;
use dsdenoise::tinynn::gradcheck::check_gradients;
use dsdenoise::tinynn::{LossSpec, Network, NetworkShape};
use rand::Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn case(seed: u64, window: usize, kernels: usize, extra_dim: usize) -> (Network, SentenceIndex, Vec<f64>) {
    let mut rng = seeded_rng(seed);
    let dims = EmbeddingDims { word: 4, position: 2 };
    let vocab_len = 10;
    let shape = NetworkShape { dims, vocab_len, window, kernels, l_max: 9, n_classes: 2, extra_dim };
    let net = Network::new(shape, EmbeddingTable::random(vocab_len, dims, seed ^ 0xabc), &mut rng);
    assert!(net.param_count() <= 1000, "{} params", net.param_count());
    let len = rng.gen_range(window.max(2)..=8);
    let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(2..vocab_len)).collect();
    let head = rng.gen_range(0..len);
    let tail = (head + 1 + rng.gen_range(0..len - 1)) % len;
    let inst = Instance { id: 0, tokens, head_pos: head, tail_pos: tail, relation: 1, bag_id: "b".into(), noise_flag: None };
    let extra = (0..extra_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    (net, SentenceIndex::new(&inst, 9), extra)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for window in [1, 3] {
        for kernels in [1, 4] {
            for (extra_dim, scale) in [(0, 1.0), (kernels, 2.0)] {
                for seed in 0..6u64 {
                    let (net, sent, extra) = case(seed * 31 + (window * 7 + kernels) as u64, window, kernels, extra_dim);
                    let mut rng = seeded_rng(seed + 1000);
                    let specs = [
                        LossSpec::CrossEntropy { target: rng.gen_range(0..2) },
                        LossSpec::LogProb { action: rng.gen_range(0..2), coefficient: rng.gen_range(-3.0..3.0) },
                    ];
                    for spec in specs {
                        let r = check_gradients(&net, &sent, &extra, scale, spec, EPS);
                        assert!(
                            r.max_rel_error < TOL,
                            "c_w={window} c_k={kernels} extra={extra_dim} seed={seed} {spec:?}: {} ({:?})",
                            r.max_rel_error,
                            r.worst
                        );
                        assert!(r.checked > r.skipped_kinks);
                        worst = worst.max(r.max_rel_error);
                        checked += r.checked;
                    }
                }
            }
        }
    }
    println!("gradient check: {checked} coordinates, max relative error {worst:e}");
}
