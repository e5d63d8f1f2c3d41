//! CSV and JSON artifacts.
//!
//! Every CSV starts with a single `# config: {...}` provenance line holding
//! the compact JSON echo of the run, followed by the header row. Floats are
//! written in shortest round-trip form, so identical runs give identical
//! bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use serde::Serialize;

use crate::error::Result;
use crate::moments::MomentCurves;
use crate::sde::Path;

fn create(path: &FsPath) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn provenance<W: Write, E: Serialize>(w: &mut W, echo: &E) -> Result<()> {
    writeln!(w, "# config: {}", serde_json::to_string(echo)?)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `t,path_id,x`, keeping every `decimation`-th grid point and always the
/// terminal one.
pub fn write_paths_csv<E: Serialize>(
    path: &FsPath,
    paths: &[Path],
    decimation: usize,
    echo: &E,
) -> Result<()> {
    let step = decimation.max(1);
    let mut w = create(path)?;
    provenance(&mut w, echo)?;
    writeln!(w, "t,path_id,x")?;
    for p in paths {
        let last = p.states.len().saturating_sub(1);
        for (k, (t, x)) in p.grid.iter().zip(&p.states).enumerate() {
            if k % step == 0 || k == last {
                writeln!(w, "{t},{},{x}", p.path_id)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `path_id,x1`; path ids are the positions in `terminal`.
pub fn write_terminal_csv<E: Serialize>(path: &FsPath, terminal: &[f64], echo: &E) -> Result<()> {
    let mut w = create(path)?;
    provenance(&mut w, echo)?;
    writeln!(w, "path_id,x1")?;
    for (id, x) in terminal.iter().enumerate() {
        writeln!(w, "{id},{x}")?;
    }
    w.flush()?;
    Ok(())
}

/// `t,mean,second,variance`.
pub fn write_moments_csv<E: Serialize>(path: &FsPath, curves: &MomentCurves, echo: &E) -> Result<()> {
    let mut w = create(path)?;
    provenance(&mut w, echo)?;
    writeln!(w, "t,mean,second,variance")?;
    for i in 0..curves.len() {
        writeln!(
            w,
            "{},{},{},{}",
            curves.grid[i], curves.mean[i], curves.second[i], curves.variance[i]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `t,A,B`.
pub fn write_coefficients_csv<E: Serialize>(
    path: &FsPath,
    rows: &[(f64, f64, f64)],
    echo: &E,
) -> Result<()> {
    let mut w = create(path)?;
    provenance(&mut w, echo)?;
    writeln!(w, "t,A,B")?;
    for (t, a, b) in rows {
        writeln!(w, "{t},{a},{b}")?;
    }
    w.flush()?;
    Ok(())
}

/// `lag,acf,fitted`.
pub fn write_acf_csv<E: Serialize>(
    path: &FsPath,
    rows: &[(usize, f64, f64)],
    echo: &E,
) -> Result<()> {
    let mut w = create(path)?;
    provenance(&mut w, echo)?;
    writeln!(w, "lag,acf,fitted")?;
    for (lag, acf, fitted) in rows {
        writeln!(w, "{lag},{acf},{fitted}")?;
    }
    w.flush()?;
    Ok(())
}
