//! Triangulates random points and checks the empty-circumcircle property.

use flexroad::delaunay::triangulate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust::{incircle, Coord};

fn main() -> flexroad::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let pts: Vec<[f64; 2]> = (0..500)
        .map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)])
        .collect();
    let tris = triangulate(&pts)?;
    let c = |k: usize| Coord {
        x: pts[k][0],
        y: pts[k][1],
    };
    let violations = tris
        .iter()
        .map(|t| {
            (0..pts.len())
                .filter(|&q| !t.contains(&q) && incircle(c(t[0]), c(t[1]), c(t[2]), c(q)) > 0.0)
                .count()
        })
        .sum::<usize>();
    println!(
        "{} points -> {} triangles, {violations} empty-circle violations",
        pts.len(),
        tris.len()
    );
    Ok(())
}
