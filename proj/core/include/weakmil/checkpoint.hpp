#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>

#include "weakmil/trainer.hpp"

namespace weakmil {

// Text checkpoint, versioned by its first line. Doubles are written in their
// shortest round-trip form so a save/load cycle is lossless.
void write_checkpoint(std::ostream& out, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& in);

// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// CSV header: epoch,loss,loss_mil,loss_cpal,lr,pairs_per_batch_mean
void write_metrics_log(std::ostream& out, std::span<const EpochMetrics> log);
void save_metrics_log(const std::filesystem::path& path, std::span<const EpochMetrics> log);

// Writes `content` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace weakmil
