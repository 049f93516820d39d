#include "cdnas/importance.hpp"

#include <cmath>
#include <stdexcept>

namespace cdnas {

double combine_importance(double gamma_S, double gamma_v, double gamma_uv,
                          const std::vector<double>& batch_raws) {
  if (batch_raws.empty()) throw std::invalid_argument("combine_importance: empty batch");
  const double raw = 1.0 / (1.0 + std::exp(-gamma_v * gamma_uv));
  double mean = 0.0;
  for (double r : batch_raws) mean += r;
  mean /= static_cast<double>(batch_raws.size());
  return gamma_S * raw / mean;
}

double weighted_main_loss(const std::vector<double>& predictions, const std::vector<int>& labels,
                          const std::vector<std::string>& domains,
                          const std::vector<double>& source_weights, const DomainSpec& spec) {
  if (predictions.size() != labels.size() || predictions.size() != domains.size())
    throw std::invalid_argument("weighted_main_loss: batch arrays differ in length");
  if (predictions.empty()) throw std::invalid_argument("weighted_main_loss: empty batch");
  double sum = 0.0;
  size_t src_seen = 0;
  for (size_t k = 0; k < predictions.size(); ++k) {
    const double p = predictions[k];
    if (!(p > 0.0 && p < 1.0))
      throw std::invalid_argument("weighted_main_loss: prediction outside (0,1) at position " +
                                  std::to_string(k));
    const double bce = labels[k] == 1 ? -std::log(p) : -std::log(1.0 - p);
    if (domains[k] == spec.target) {
      sum += bce;
    } else {
      if (src_seen >= source_weights.size())
        throw std::invalid_argument("weighted_main_loss: missing weight for a source edge");
      sum += source_weights[src_seen++] * bce;
    }
  }
  if (src_seen != source_weights.size())
    throw std::invalid_argument("weighted_main_loss: more weights than source edges");
  return sum / static_cast<double>(predictions.size());
}

}  // namespace cdnas
