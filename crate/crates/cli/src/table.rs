//! Minimal aligned text tables for stdout reporting.

/// Render rows under a header with two-space gutters. Columns whose cells
/// are all numeric are right-aligned; everything else is left-aligned.
pub fn render(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (c, cell) in row.iter().enumerate().take(cols) {
            widths[c] = widths[c].max(cell.len());
        }
    }
    let numeric: Vec<bool> = (0..cols)
        .map(|c| {
            !rows.is_empty() && rows.iter().all(|r| r[c].parse::<f64>().is_ok())
        })
        .collect();
    let mut out = String::new();
    let emit_row = |out: &mut String, cells: &[String]| {
        for (c, cell) in cells.iter().enumerate() {
            if c > 0 {
                out.push_str("  ");
            }
            let pad = widths[c].saturating_sub(cell.len());
            if numeric[c] {
                out.extend(std::iter::repeat(' ').take(pad));
                out.push_str(cell);
            } else {
                out.push_str(cell);
                if c + 1 < cols {
                    out.extend(std::iter::repeat(' ').take(pad));
                }
            }
        }
        out.push('\n');
    };
    let header_cells: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    emit_row(&mut out, &header_cells);
    for row in rows {
        emit_row(&mut out, row);
    }
    out
}
