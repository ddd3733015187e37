//! Host wall-clock timing of the three inference variants.

use std::time::Instant;

use attnmesh_core::cost::Variant;
use attnmesh_core::network::{forward_cascade_batch, CascadeModel};
use attnmesh_core::{Model, Tensor};

use crate::error::{Error, Result};
use crate::report::Timing;

fn run(v: Variant, face: &Model, cascade: &CascadeModel, images: &[&Tensor<f32>]) -> Result<()> {
    // one image per call, as in a per-frame pipeline
    for im in images {
        match v {
            Variant::MeshOnly => drop(face.forward_mesh_batch(&[im])?),
            Variant::AttentionMesh => drop(face.forward_unified_batch(&[im])?),
            Variant::Cascade => drop(forward_cascade_batch(face, cascade, &[im])?),
        }
    }
    Ok(())
}

/// Mean and standard deviation of per-image latency over `repetitions`
/// passes of `images`, after one warm-up pass.
pub fn benchmark_wallclock(
    variants: &[Variant],
    face: &Model,
    cascade: &CascadeModel,
    images: &[&Tensor<f32>],
    repetitions: usize,
) -> Result<Vec<Timing>> {
    if repetitions < 3 {
        return Err(Error::Usage(format!("repetitions must be at least 3, got {repetitions}")));
    }
    if images.is_empty() {
        return Err(Error::Usage(String::from("benchmark needs at least one image")));
    }
    let mut out = Vec::with_capacity(variants.len());
    for &v in variants {
        run(v, face, cascade, images)?;
        let mut ms = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t = Instant::now();
            run(v, face, cascade, images)?;
            ms.push(t.elapsed().as_secs_f64() * 1e3 / images.len() as f64);
        }
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        let var = ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (ms.len() - 1) as f64;
        out.push(Timing {
            variant: v,
            images: images.len(),
            repetitions,
            mean_ms: mean,
            stddev_ms: var.sqrt(),
            image_encodes: v.image_encodes(),
        });
    }
    Ok(out)
}
