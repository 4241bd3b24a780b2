//! Small file-format helpers shared by the library and the command line.

use std::io::Write;

use crate::error::Result;

/// Write a standalone SVG containing one polyline (closed when `closed`).
pub fn write_svg_polyline<W: Write>(
    writer: &mut W,
    points: &[(f64, f64)],
    width: f64,
    height: f64,
    closed: bool,
) -> Result<()> {
    writeln!(
        writer,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )?;
    writeln!(writer, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    let tag = if closed { "polygon" } else { "polyline" };
    write!(writer, r#"<{tag} fill="none" stroke="black" stroke-width="1" points=""#)?;
    for (i, (x, y)) in points.iter().enumerate() {
        if i > 0 {
            write!(writer, " ")?;
        }
        write!(writer, "{x:.3},{y:.3}")?;
    }
    writeln!(writer, r#""/>"#)?;
    writeln!(writer, "</svg>")?;
    Ok(())
}
