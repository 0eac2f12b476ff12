#pragma once

#include <string>

#include "cle/backbone.hpp"
#include "cle/trainer.hpp"

namespace cle {

// Self-describing container: text header carrying names, shapes, per-tensor
// checksums and run metadata, then one raw little-endian float64 payload per
// tensor in header order. Round-trips are bit-exact; any mismatch in version
// or checksum is a hard error. Writes go through a temp file plus rename.

void save_backbone_checkpoint(const Backbone& backbone, const std::string& path);
Backbone load_backbone_checkpoint(const std::string& path);

void save_sequence_checkpoint(const SequenceState& state, const std::string& path);
SequenceState load_sequence_checkpoint(const std::string& path);

// Which kind of model a checkpoint file holds.
std::string checkpoint_kind(const std::string& path);

// Metric rows recorded when a sequence checkpoint was written.
long long metric_row_offset(const std::string& path);

}  // namespace cle
