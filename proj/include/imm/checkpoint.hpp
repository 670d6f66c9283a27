#pragma once

// Checkpoint directories.
//
//   phase 1 (sft):  manifest.json  backbone.tarc  adapter1.tarc  loss_log.csv
//   phase 2 (cls):  manifest.json  backbone.tarc  adapter1.tarc  adapter2.tarc
//                   head.tarc  loss_log.csv
//
// A .tarc archive is little-endian: "IMMT", u32 version, u32 count, then per
// tensor u32 name length, name bytes, u32 rows, u32 cols, rows·cols f64 values.

#include <filesystem>
#include <memory>

#include <json.hpp>

#include "imm/classifier.hpp"
#include "imm/model.hpp"
#include "imm/training.hpp"

namespace imm {

void write_tensor_archive(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap read_tensor_archive(const std::filesystem::path& path);

// Extra manifest fields supplied by the caller (config hash, data hash, ...).
using ManifestExtras = nlohmann::json;

void save_phase1(const std::filesystem::path& dir, const DecoderModel& model, const TrainConfig& cfg,
                 const PhaseReport& report, const ManifestExtras& extras = nlohmann::json::object());

struct Phase1Checkpoint {
    std::shared_ptr<DecoderModel> model;  // backbone with adapter set 0 loaded
    nlohmann::json manifest;
};

// Throws MissingCheckpoint when the directory or its manifest is absent.
Phase1Checkpoint load_phase1(const std::filesystem::path& dir);

void save_phase2(const std::filesystem::path& dir, const SequenceClassifier& classifier, TaskKind task,
                 const TrainConfig& cfg, const PhaseReport& report,
                 const ManifestExtras& extras = nlohmann::json::object());

struct Phase2Checkpoint {
    std::unique_ptr<SequenceClassifier> classifier;
    TaskKind task = TaskKind::Binary;
    nlohmann::json manifest;
};

Phase2Checkpoint load_phase2(const std::filesystem::path& dir);

nlohmann::json read_manifest(const std::filesystem::path& dir);

}  // namespace imm
