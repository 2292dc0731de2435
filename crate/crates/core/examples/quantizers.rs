//! Finite scalar quantization and nearest-neighbour vector quantization.

use sfms::quantizer::{fsq_id_to_levels, Codebook};
use sfms::rng;

fn main() -> sfms::Result<()> {
    let fsq = Codebook::fsq(vec![4, 4, 4, 4])?;
    println!("fsq codebook size {}", fsq.size());
    for z in [[0.0, 0.0, 0.0, 0.0], [3.0, -3.0, 0.4, -0.2], [0.9, 0.1, -0.5, 2.0]] {
        let (id, q) = fsq.encode(&z)?;
        println!("  {z:?} -> id {id:>3} levels {:?} value {q:.3?}", fsq_id_to_levels(id, &[4, 4, 4, 4])?);
    }

    let vq = Codebook::init_vq(16, 3, &mut rng::stream(0, "example", 0))?;
    let (id, q) = vq.encode(&[0.1, -0.2, 0.3])?;
    println!("vq: nearest of {} entries is #{id} at {q:.3?}", vq.size());
    Ok(())
}
