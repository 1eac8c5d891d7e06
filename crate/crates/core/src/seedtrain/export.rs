//! CSV renderings. The first line holds column names, the second their units.

use super::simulate::{Bands, PassagingEvent};
use crate::kinetics::STATE_UNITS;
use std::fmt::Write;

pub fn protocol_csv(protocol: &[PassagingEvent]) -> String {
    let mut out = String::from(
        "scale_index,scale,next_scale,time,local_time,required_transfer_vcd,transfer_vcd,\
         seeding_vcd,suspension_used,medium_added,discarded,transfer_violations,seeding_violations\n\
         -,-,-,h,h,cells/L,cells/L,cells/L,L,L,L,count,count\n",
    );
    for e in protocol {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            e.scale_index,
            e.from_scale,
            e.to_scale,
            e.time,
            e.local_time,
            e.required_transfer_vcd,
            e.transfer_vcd,
            e.seeding_vcd,
            e.suspension_used,
            e.medium_added,
            e.discarded,
            e.transfer_violations,
            e.seeding_violations
        )
        .unwrap();
    }
    out
}

/// Hourly mean and 5 % / 95 % quantiles of state variable `var` over all scales.
pub fn bands_csv(bands: &Bands, var: usize) -> String {
    let u = STATE_UNITS[var];
    let mut out = format!("scale,time,mean,q05,q95\n-,h,{u},{u},{u}\n");
    for seg in &bands.segments {
        for (t, pts) in seg.times.iter().zip(&seg.points) {
            let p = pts[var];
            writeln!(out, "{},{},{},{},{}", seg.scale, t, p.mean, p.q05, p.q95).unwrap();
        }
    }
    out
}
