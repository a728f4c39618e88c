use oransim::channel::{ChannelState, Topology};
use oransim::env::{EnvConfig, RrmEnv};
use oransim::rng::substream_indexed;
use oransim::scheduler::PunctureAction;
use std::time::Instant;

fn main() {
    let cfg = EnvConfig::default();
    let mut topo_rng = oransim::rng::substream(1, "topology");
    let topo = Topology::generate(4, 30, 200.0, &mut topo_rng);
    let mut chan = ChannelState::new(&topo, 100).unwrap();
    let mut rngs: Vec<_> = (0..4).map(|c| substream_indexed(1, "fading", c)).collect();
    let serving: Vec<usize> = (0..4).flat_map(|c| std::iter::repeat(c).take(30)).collect();
    let powers = vec![1e-3; 4];

    let t = Instant::now();
    for _ in 0..1000 { chan.resample_fading(30, &mut rngs); }
    println!("resample_fading: {:.3} ms", t.elapsed().as_secs_f64());

    let t = Instant::now();
    for _ in 0..1000 { chan.recompute_sinr(&serving, &powers, 1e-15); }
    println!("recompute_sinr:  {:.3} ms", t.elapsed().as_secs_f64());

    // full step for comparison
    let mut env = RrmEnv::new(cfg).unwrap();
    env.reset(1).unwrap();
    let acts = vec![PunctureAction::clipped(0.7, 0.9); 4];
    let t = Instant::now();
    let mut n = 0; let mut ep = 0;
    for _ in 0..1000 {
        let r = env.step(&acts).unwrap();
        n += 1;
        if r.done { ep += 1; env.reset(ep).unwrap(); }
    }
    println!("full step:       {:.3} ms ({} slots)", t.elapsed().as_secs_f64(), n);
}
