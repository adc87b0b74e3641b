use crate::metrics::TrackMetrics;

pub const RESULTS_HEADER: &str = "sequence_id,object_id,Q,Acc,Rob,NRE,DRE,ADQ,J,F,JF,final_memory_size";

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// One row per track under [`RESULTS_HEADER`]. Undefined ratios print `NaN`;
/// an unknown memory size prints an empty field.
pub fn write_results_csv(rows: &[TrackMetrics]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.sequence_id.clone(),
            r.object_id.to_string(),
            num(r.q),
            num(r.acc),
            num(r.rob),
            num(r.nre),
            num(r.dre),
            num(r.adq),
            num(r.j),
            num(r.f),
            num(r.jf),
            r.final_memory_size.map(|s| s.to_string()).unwrap_or_default(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
