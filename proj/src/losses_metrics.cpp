#include "cgcce/losses_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cgcce {

namespace {

double pixel_bce(double p, double y) {
    p = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

double bce_loss(std::span<const double> prob, std::span<const double> target) {
    if (prob.size() != target.size()) {
        throw ShapeError("bce_loss: " + std::to_string(prob.size()) + " predictions vs " +
                         std::to_string(target.size()) + " targets");
    }
    if (prob.empty()) throw ShapeError("bce_loss: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) total += pixel_bce(prob[i], target[i]);
    return total / static_cast<double>(prob.size());
}

Var bce_loss(const Var& logits, const Tensor& target) {
    if (logits.value().numel() != target.numel()) {
        throw ShapeError("bce_loss: logits " + to_string(logits.shape()) + " vs target " + to_string(target.shape()));
    }
    const std::int64_t n = target.numel();
    if (n == 0) throw ShapeError("bce_loss: empty input");
    Tensor prob(logits.shape());
    const double* z = logits.value().data();
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        prob[i] = sigmoid(z[i]);
        total += pixel_bce(prob[i], target[i]);
    }
    Tensor out({1}, total / static_cast<double>(n));
    return make_result(std::move(out), {logits}, [prob = std::move(prob), target, n](Node& node) {
        Node& in = *node.inputs[0];
        if (!in.requires_grad) return;
        const double g = node.grad[0] / static_cast<double>(n);
        Tensor& gi = in.grad_buffer();
        for (std::int64_t i = 0; i < n; ++i) gi[i] += g * (prob[i] - target[i]);
    });
}

ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size()) {
        throw ShapeError("confusion: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) +
                         " pixels");
    }
    std::int64_t hist[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] > 1 || gt[i] > 1) {
            throw std::invalid_argument("confusion: non-binary value at pixel " + std::to_string(i));
        }
        ++hist[pred[i] * 2 + gt[i]];
    }
    ConfusionCounts c;
    c.tn = hist[0];
    c.fn = hist[1];
    c.fp = hist[2];
    c.tp = hist[3];
    return c;
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw ShapeError("confusion: mask " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
    }
    return confusion(std::span<const std::uint8_t>(pred.values), std::span<const std::uint8_t>(gt.values));
}

MetricReport metrics(const ConfusionCounts& c) {
    if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) throw std::invalid_argument("metrics: negative count");
    MetricReport r;
    r.counts = c;
    if (c.tp + c.fp + c.fn == 0) {
        r.f1 = r.iou = r.precision = r.recall = 1.0;
        return r;
    }
    const auto ratio = [](std::int64_t num, std::int64_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    r.precision = ratio(c.tp, c.tp + c.fp);
    r.recall = ratio(c.tp, c.tp + c.fn);
    r.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    r.iou = ratio(c.tp, c.tp + c.fp + c.fn);
    return r;
}

std::string metric_csv_header() { return "split,f1,iou,precision,recall,tp,fp,fn,tn"; }

std::string metric_csv_row(const std::string& split, const MetricReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f,%lld,%lld,%lld,%lld", r.f1, r.iou, r.precision, r.recall,
                  static_cast<long long>(r.counts.tp), static_cast<long long>(r.counts.fp),
                  static_cast<long long>(r.counts.fn), static_cast<long long>(r.counts.tn));
    return split + buf;
}

BinaryMask threshold_logits(const Tensor& logits, double threshold) {
    const Shape& s = logits.shape();
    if (!(s.size() == 2 || (s.size() == 3 && s[0] == 1))) {
        throw ShapeError("threshold_logits: expected HxW or 1xHxW, got " + to_string(s));
    }
    BinaryMask m(s[s.size() - 2], s[s.size() - 1]);
    for (std::int64_t i = 0; i < logits.numel(); ++i) {
        m.values[static_cast<std::size_t>(i)] = sigmoid(logits[i]) > threshold ? 1 : 0;
    }
    return m;
}

}  // namespace cgcce
