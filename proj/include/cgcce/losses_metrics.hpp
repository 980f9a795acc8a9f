#pragma once

#include <span>
#include <string>

#include "cgcce/core_types.hpp"

namespace cgcce {

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy of probabilities against {0,1} targets, with
/// probabilities clamped to [eps, 1 - eps].
double bce_loss(std::span<const double> prob, std::span<const double> target);

/// Differentiable form taking logits. The value is the clamped loss of
/// sigmoid(logits); the gradient is (sigmoid(logits) - target) / n, so
/// saturated pixels keep a learning signal.
Var bce_loss(const Var& logits, const Tensor& target);

ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

struct MetricReport {
    double f1 = 0.0;
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    ConfusionCounts counts;
};

/// With no positives anywhere (tp + fp + fn == 0) every metric is 1;
/// otherwise a zero denominator gives 0 for that metric.
MetricReport metrics(const ConfusionCounts& c);

/// "split,f1,iou,precision,recall,tp,fp,fn,tn"
std::string metric_csv_header();
std::string metric_csv_row(const std::string& split, const MetricReport& r);

/// Thresholds sigmoid(logits) (1 x H x W or H x W) at `threshold`.
BinaryMask threshold_logits(const Tensor& logits, double threshold);

}  // namespace cgcce
