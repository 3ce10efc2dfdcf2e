//! Recovery-time cost model.
//!
//! Recovery time is the sum of three phases: decoder download over the DL
//! link, local fine-tuning on the user device, and upload of the unfrozen
//! parameters over the UL link. Link latency is payload·8/rate; compute
//! latency is FLOPs/(device FLOP/s). Payload units are decimal: 1 kB =
//! 1000 bytes.
//!
//! FLOP accounting per sample: a forward pass costs 2·MACs for every unit,
//! a backward pass costs 4·MACs for a trainable unit (input and weight
//! gradients) but only 2·MACs for a frozen one (gradient flow-through
//! without weight gradients). The task head γ never trains; when present it
//! adds its forward cost only.

use crate::arch;
use crate::error::{Error, Result};
use crate::layers::NameSet;

pub const BITS_PER_BYTE: f64 = 8.0;
/// Decimal kilobyte, matching link-budget conventions.
pub const KILOBYTE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    ul_rate_bps: f64,
    dl_rate_bps: f64,
}

impl LinkParams {
    pub fn new(ul_rate_bps: f64, dl_rate_bps: f64) -> Result<Self> {
        for (name, r) in [("uplink", ul_rate_bps), ("downlink", dl_rate_bps)] {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} rate must be a positive finite bit rate, got {r}"
                )));
            }
        }
        Ok(LinkParams {
            ul_rate_bps,
            dl_rate_bps,
        })
    }

    pub fn ul_rate_bps(&self) -> f64 {
        self.ul_rate_bps
    }

    pub fn dl_rate_bps(&self) -> f64 {
        self.dl_rate_bps
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeParams {
    flops_per_second: f64,
}

impl ComputeParams {
    pub fn new(flops_per_second: f64) -> Result<Self> {
        if !(flops_per_second.is_finite() && flops_per_second > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "device compute must be positive FLOP/s, got {flops_per_second}"
            )));
        }
        Ok(ComputeParams { flops_per_second })
    }

    pub fn flops_per_second(&self) -> f64 {
        self.flops_per_second
    }
}

pub fn link_latency(payload_bytes: u64, rate_bps: f64) -> f64 {
    payload_bytes as f64 * BITS_PER_BYTE / rate_bps
}

pub fn compute_latency(flops: f64, compute: &ComputeParams) -> f64 {
    flops / compute.flops_per_second
}

/// Per-unit MAC counts for one sample through the full virtual transceiver.
/// Unit names match the freeze mask ("dec.conv3", ..., "codebook"); encoder
/// units are listed too since fine-tuning always trains them.
#[derive(Debug, Clone)]
pub struct UnitCosts {
    pub units: Vec<(String, u64)>,
    /// Forward MACs of the task head γ (0 when no head is attached).
    pub head_macs: u64,
}

impl UnitCosts {
    pub fn total_macs(&self) -> u64 {
        self.units.iter().map(|(_, m)| m).sum()
    }
}

/// MAC table for the fixed architecture; `n_classes` attaches the head.
pub fn transceiver_unit_costs(n_classes: Option<usize>) -> Result<UnitCosts> {
    let mut units = Vec::new();
    for (name, macs) in arch::encoder().layer_macs(&arch::input_shape())? {
        units.push((format!("enc.{name}"), macs));
    }
    units.push((
        "codebook".to_string(),
        (arch::GRID_H * arch::GRID_W * arch::CODEBOOK_K * arch::CODE_DIM) as u64,
    ));
    for (name, macs) in arch::decoder()
        .layer_macs(&[arch::CODE_DIM, arch::GRID_H, arch::GRID_W])?
    {
        units.push((format!("dec.{name}"), macs));
    }
    let head_macs = match n_classes {
        Some(n) => arch::classifier(n)
            .layer_macs(&arch::input_shape())?
            .iter()
            .map(|(_, m)| m)
            .sum(),
        None => 0,
    };
    Ok(UnitCosts { units, head_macs })
}

/// Total fine-tuning FLOPs over `epochs` passes of `n_samples`.
pub fn fine_tune_flops(
    costs: &UnitCosts,
    frozen_units: &NameSet,
    n_samples: u64,
    epochs: u64,
    include_head_forward: bool,
) -> f64 {
    let mut per_sample = 0u64;
    for (name, macs) in &costs.units {
        let factor = if frozen_units.contains(name.as_str()) {
            2 + 2
        } else {
            2 + 4
        };
        per_sample += factor * macs;
    }
    if include_head_forward {
        per_sample += 2 * costs.head_macs;
    }
    per_sample as f64 * n_samples as f64 * epochs as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub dl_latency_s: f64,
    pub ft_latency_s: f64,
    pub ul_latency_s: f64,
    pub recovery_time_s: f64,
}

pub fn recovery_time(
    dl_bytes: u64,
    ft_flops: f64,
    ul_bytes: u64,
    links: &LinkParams,
    compute: &ComputeParams,
) -> CostBreakdown {
    let dl = link_latency(dl_bytes, links.dl_rate_bps);
    let ft = compute_latency(ft_flops, compute);
    let ul = link_latency(ul_bytes, links.ul_rate_bps);
    CostBreakdown {
        dl_latency_s: dl,
        ft_latency_s: ft,
        ul_latency_s: ul,
        recovery_time_s: dl + ft + ul,
    }
}
