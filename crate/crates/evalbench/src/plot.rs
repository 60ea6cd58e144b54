use std::path::Path;

use plotters::prelude::*;

use crate::EvalError;

/// Line plot of top-1 accuracy (percent) against the number of input points.
pub fn accuracy_vs_points(curve: &[(usize, f64)], path: &Path) -> Result<(), EvalError> {
    let plot_err = |e: &dyn std::fmt::Display| EvalError::Plot(e.to_string());
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|&(c, a)| (c as f64, a)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let x_max = pts.last().map_or(1.0, |p| p.0).max(1.0);
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("top-1 accuracy vs. points per clip", ("sans-serif", 18))
        .margin(16)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(0.0..x_max * 1.05, 0.0..100.0)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("points")
        .y_desc("top-1 (%)")
        .draw()
        .map_err(|e| plot_err(&e))?;
    chart.draw_series(LineSeries::new(pts.iter().copied(), &BLUE)).map_err(|e| plot_err(&e))?;
    chart
        .draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
