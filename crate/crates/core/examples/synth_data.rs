//! Generate a synthetic motion sequence, store it as SFMC and read it back.

use sfms::data::{read_container, read_sidecar, synth_sequence, write_container, write_sidecar, Sidecar, SynthSpec};

fn main() -> sfms::Result<()> {
    let spec = SynthSpec::default();
    let s = synth_sequence(&spec, 7)?;
    println!("{} frames x {} channels", s.sequence.len(), s.sequence.dims());
    for e in &s.events {
        println!("  event class {} apex {:>2} amplitude {:.2}", e.class, e.apex, e.amplitude);
    }

    let dir = std::env::temp_dir().join("sfms_synth_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("seq.sfmc");
    write_container(&s.sequence, &path)?;
    write_sidecar(
        &path,
        &Sidecar {
            fps: s.sequence.fps,
            schema: s.sequence.schema,
            events: s.events.clone(),
        },
    )?;
    let back = read_container(&path)?;
    let side = read_sidecar(&path)?;
    println!(
        "round trip: max diff {:e}, {} events in sidecar",
        back.frames.max_abs_diff(&s.sequence.frames),
        side.events.len()
    );
    Ok(())
}
