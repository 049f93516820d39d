#include "cdnas/bilevel.hpp"

#include <stdexcept>

namespace cdnas {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::FULL: return "FULL";
    case Variant::MANUAL: return "MANUAL";
    case Variant::MIX: return "MIX";
    case Variant::DISCRETE: return "DISCRETE";
    case Variant::NO_SOURCE: return "NO-SOURCE";
    case Variant::NO_IMPO: return "NO-IMPO";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants())
    if (name == variant_name(v)) return v;
  throw std::invalid_argument("unknown variant '" + name + "'");
}

std::vector<Variant> all_variants() {
  return {Variant::FULL,     Variant::MANUAL,    Variant::MIX,
          Variant::DISCRETE, Variant::NO_SOURCE, Variant::NO_IMPO};
}

void BilevelConfig::validate() const {
  if (K < 0) throw std::invalid_argument("bilevel config: K must be non-negative");
  if (T_inner < 1) throw std::invalid_argument("bilevel config: T_inner must be at least 1");
  if (warmup_epochs < 0 || max_epochs < 1 || warmup_epochs > max_epochs)
    throw std::invalid_argument("bilevel config: need 0 <= warmup_epochs <= max_epochs");
  if (patience < 1) throw std::invalid_argument("bilevel config: patience must be at least 1");
  if (lr_inner < 0 || lr_outer < 0)
    throw std::invalid_argument("bilevel config: learning rates must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("bilevel config: batch_size must be positive");
  if (negative_ratio <= 0)
    throw std::invalid_argument("bilevel config: negative_ratio must be positive");
  if (resolved_alpha() <= 0)
    throw std::invalid_argument("bilevel config: alpha (or lr_inner) must be positive");
  if (optimizer != "adam" && optimizer != "sgd")
    throw std::invalid_argument("bilevel config: optimizer must be adam or sgd");
}

}  // namespace cdnas
