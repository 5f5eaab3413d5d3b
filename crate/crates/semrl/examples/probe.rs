use semrl::corpus::load_corpus;
use semrl::pipeline::decode_split;
use semrl::policy::load_checkpoint;
use semrl::reward::RewardConfig;
use semrl::seeding::stage_rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let data = &args[1];
    let ckpt = &args[2];
    let temp: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.3);
    let n_samp: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);
    let (lexicon, bundle) = load_corpus(std::path::Path::new(data)).unwrap();
    let (policy, _) = load_checkpoint(std::path::Path::new(ckpt)).unwrap();
    let outs = decode_split(&policy, &bundle.dev, &lexicon, &RewardConfig::default()).unwrap();
    let n = outs.len();
    let mut lens: Vec<usize> = Vec::new();
    let mut cyclers = 0usize;
    let mut misses = 0usize;
    let mut imperfect = 0usize;
    let mut rng = stage_rng(12345, 99);
    let mut missed_docs = 0usize;
    let mut discovered = 0usize;
    let mut samp_len_sum = 0usize;
    let mut samp_n = 0usize;
    for (out, ex) in outs.iter().zip(&bundle.dev) {
        let g = ex.reference.tokens.len() as f64;
        let len_excess = (out.tokens.len() as f64 / g - 1.0).clamp(0.0, 1.0);
        let comp = out.coverage - 0.2 * len_excess - 0.05 * out.rep_ratio;
        lens.push(out.tokens.len());
        if out.tokens.len() >= 60 {
            cyclers += 1;
        }
        if out.coverage < 1.0 {
            misses += 1;
            // discovery: can temp sampling reach every greedy-missed token?
            let missing: Vec<&String> = ex
                .reference
                .tokens
                .iter()
                .filter(|t| !out.tokens.contains(t))
                .collect();
            missed_docs += 1;
            let mut seen: Vec<bool> = vec![false; missing.len()];
            for _ in 0..n_samp {
                let traj = policy.sample_with_rng(&ex.source, temp, &mut rng).unwrap();
                samp_len_sum += traj.tokens.len();
                samp_n += 1;
                for (i, m) in missing.iter().enumerate() {
                    if traj.tokens.iter().any(|t| t == *m) {
                        seen[i] = true;
                    }
                }
            }
            if seen.iter().all(|&b| b) {
                discovered += 1;
            }
        }
        if comp < 1.0 - 1e-12 {
            imperfect += 1;
        }
    }
    let mean: f64 = lens.iter().sum::<usize>() as f64 / n as f64;
    lens.sort_unstable();
    println!(
        "mean_len {:.2} p50 {} cyclers {:.1}% miss {:.1}% imperfect {:.1}% disc {:.1}% samp_len {:.1}",
        mean,
        lens[n / 2],
        100.0 * cyclers as f64 / n as f64,
        100.0 * misses as f64 / n as f64,
        100.0 * imperfect as f64 / n as f64,
        100.0 * discovered as f64 / missed_docs.max(1) as f64,
        samp_len_sum as f64 / samp_n.max(1) as f64
    );
}
