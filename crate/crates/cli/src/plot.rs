//! Minimal SVG bar charts of per-phase energy.

use std::fmt::Write as _;

use ecosched_core::experiment::StrategyResults;

const WIDTH: f64 = 360.0;
const HEIGHT: f64 = 240.0;
const MARGIN: f64 = 40.0;

/// Mean S1 and S2 energy with one-standard-deviation whiskers.
pub fn phase_energy_svg(title: &str, s: &StrategyResults) -> String {
    let m = &s.summary;
    let bars = [
        ("S1", m.e_s1_mean, m.e_s1_std),
        ("S2", m.e_s2_mean, m.e_s2_std),
    ];
    let top = bars
        .iter()
        .map(|(_, v, e)| v + e)
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.1;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y = |v: f64| HEIGHT - MARGIN - v / top * plot_h;
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len() as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
    for (i, (label, value, std)) in bars.iter().enumerate() {
        let x = MARGIN + slot * (i as f64 + 0.2);
        let w = slot * 0.6;
        let cx = x + w / 2.0;
        let _ = writeln!(
            svg,
            r##"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="#4a7f5f"/>"##,
            y(*value),
            HEIGHT - MARGIN - y(*value)
        );
        if *std > 0.0 {
            let _ = writeln!(
                svg,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y(value + std),
                y((value - std).max(0.0))
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{value:.3} J</text>"#,
            y(value + std) - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            HEIGHT - MARGIN + 16.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecosched_core::experiment::{summarize, RunResult};
    use ecosched_core::{NodeId, StrategyKind};

    #[test]
    fn bars_scale_to_the_largest_value() {
        let run = |e_s1, e_s2| RunResult {
            run: 0,
            seed: 0,
            e_s1,
            e_s2,
            ei: 0.0,
            chosen_node: NodeId::new("N3"),
            scores: Default::default(),
            phases: Vec::new(),
        };
        let runs = vec![run(10.0, 20.0)];
        let s = StrategyResults {
            strategy: StrategyKind::GreennessEq1,
            summary: summarize(&runs).unwrap(),
            runs,
        };
        let svg = phase_energy_svg("a <b>", &s);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a &lt;b&gt;"));
        assert!(svg.contains("10.000 J") && svg.contains("20.000 J"));
        // S2 bar spans 1/1.1 of the plot height.
        let h = (HEIGHT - 2.0 * MARGIN) / 1.1;
        assert!(svg.contains(&format!("height=\"{h:.2}\"")), "{svg}");
    }
}
