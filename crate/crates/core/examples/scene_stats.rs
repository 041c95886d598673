use uncmap_core::noise_sim::{generate_scene, Layout};

fn main() {
    for layout in Layout::ALL {
        let mut v = 0;
        let mut a = 0;
        let mut e = 0;
        for seed in 0..20 {
            let s = generate_scene(layout, seed);
            v += s.elements.iter().map(|e| e.points.len()).sum::<usize>();
            e += s.elements.len();
            a += s.agents.len();
        }
        println!("{layout}: elements/scene {} vertices/scene {} agents/scene {}", e / 20, v / 20, a as f64 / 20.0);
    }
}
