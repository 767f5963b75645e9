#pragma once

#include <string>

#include "posediff/denoiser.hpp"
#include "posediff/schedule.hpp"

namespace posediff {

/// Everything needed to run inference: architecture, schedule parameters,
/// normalization scale, raw weights and their EMA shadow.
///
/// File layout (all integers little-endian):
///   bytes 0..7    magic "PDIFCKPT"
///   bytes 8..11   uint32 format version (currently 1)
///   bytes 12..19  uint64 header length in bytes
///   header        UTF-8 JSON: schema_version, topology, model {dim, layers,
///                 heads, time_dim}, schedule {steps, beta1, betaT},
///                 normalization {scale_mm}, tensors [{name, shape, count}]
///   payload       the listed tensors' doubles (IEEE-754, little-endian),
///                 params first, then EMA tensors under "ema." names
struct Checkpoint {
    std::string topology = "h36m17";
    DenoiserConfig model;
    int schedule_steps = 1000;
    double beta1 = 1e-4;
    double betaT = 0.02;
    double scale_mm = 1.0;
    ParamSet params;
    ParamSet ema;

    NoiseSchedule schedule() const { return build_linear_schedule(schedule_steps, beta1, betaT); }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace posediff
