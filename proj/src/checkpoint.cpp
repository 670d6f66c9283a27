#include "imm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "imm/error.hpp"

namespace imm {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "tensor archives assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'I', 'M', 'M', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw Error(Errc::MalformedRecord, "truncated tensor archive");
    return v;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error(Errc::IoFailure, "cannot write '" + path.string() + "'");
}

void require_dir(const fs::path& dir) {
    if (!fs::is_directory(dir) || !fs::exists(dir / "manifest.json"))
        throw Error(Errc::MissingCheckpoint, "no checkpoint at '" + dir.string() + "'");
}

}  // namespace

void write_tensor_archive(const fs::path& path, const TensorMap& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::IoFailure, "cannot write '" + path.string() + "'");
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(m.rows()));
        put_u32(out, static_cast<std::uint32_t>(m.cols()));
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!out) throw Error(Errc::IoFailure, "write failed for '" + path.string() + "'");
}

TensorMap read_tensor_archive(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::MissingCheckpoint, "cannot open '" + path.string() + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(Errc::MalformedRecord, "not a tensor archive");
    if (get_u32(in) != kVersion) throw Error(Errc::MalformedRecord, "unsupported tensor archive version");
    const auto count = get_u32(in);
    TensorMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(get_u32(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        const auto rows = get_u32(in);
        const auto cols = get_u32(in);
        MatrixD m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!in) throw Error(Errc::MalformedRecord, "truncated tensor archive");
        out.emplace(std::move(name), std::move(m));
    }
    return out;
}

json read_manifest(const fs::path& dir) {
    require_dir(dir);
    std::ifstream in(dir / "manifest.json");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::MalformedRecord, "manifest in '" + dir.string() + "' is not valid JSON");
    return j;
}

void save_phase1(const fs::path& dir, const DecoderModel& model, const TrainConfig& cfg, const PhaseReport& report,
                 const ManifestExtras& extras) {
    fs::create_directories(dir);
    const auto& spec = model.adapter_spec(report.adapter_set);
    json manifest = extras.is_object() ? extras : json::object();
    manifest["phase"] = "sft";
    manifest["backbone"] = to_json(model.config());
    manifest["adapters"] = json::array({to_json(spec)});
    manifest["rank"] = spec.rank;
    manifest["scale"] = spec.scale;
    manifest["target_pattern"] = spec.target_pattern;
    manifest["seed"] = cfg.seed;
    manifest["train"] = to_json(cfg);
    manifest["initial_loss"] = report.initial_loss;
    manifest["final_loss"] = report.final_loss;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    write_tensor_archive(dir / "backbone.tarc", model.export_base());
    write_tensor_archive(dir / "adapter1.tarc", model.export_adapter_set(report.adapter_set));
    write_text(dir / "loss_log.csv", loss_log_csv(report.log));
}

namespace {

std::shared_ptr<DecoderModel> load_backbone_with_adapters(const fs::path& dir, const json& manifest,
                                                          std::size_t n_sets) {
    if (!manifest.contains("backbone") || !manifest.contains("adapters") || manifest["adapters"].size() < n_sets)
        throw Error(Errc::MalformedRecord, "manifest in '" + dir.string() + "' lacks backbone/adapters");
    auto model = std::make_shared<DecoderModel>(backbone_from_json(manifest["backbone"]));
    model->import_base(read_tensor_archive(dir / "backbone.tarc"));
    for (std::size_t s = 0; s < n_sets; ++s) {
        const auto set = model->add_adapter_set(adapter_spec_from_json(manifest["adapters"][s]));
        model->import_adapter_set(set, read_tensor_archive(dir / ("adapter" + std::to_string(s + 1) + ".tarc")));
    }
    model->set_trainable_sets({});
    return model;
}

}  // namespace

Phase1Checkpoint load_phase1(const fs::path& dir) {
    auto manifest = read_manifest(dir);
    if (manifest.value("phase", "") != "sft")
        throw Error(Errc::MissingCheckpoint, "'" + dir.string() + "' is not a phase-1 checkpoint");
    return {load_backbone_with_adapters(dir, manifest, 1), manifest};
}

void save_phase2(const fs::path& dir, const SequenceClassifier& classifier, TaskKind task, const TrainConfig& cfg,
                 const PhaseReport& report, const ManifestExtras& extras) {
    fs::create_directories(dir);
    const auto& model = classifier.backbone();
    if (model.adapter_set_count() != 2)
        throw Error(Errc::InvalidArgument, "phase-2 classifier must carry exactly two adapter sets");
    json manifest = extras.is_object() ? extras : json::object();
    manifest["phase"] = "cls";
    manifest["task"] = task_name(task);
    manifest["backbone"] = to_json(model.config());
    manifest["adapters"] = json::array({to_json(model.adapter_spec(0)), to_json(model.adapter_spec(1))});
    manifest["rank"] = model.adapter_spec(1).rank;
    manifest["scale"] = model.adapter_spec(1).scale;
    manifest["target_pattern"] = model.adapter_spec(1).target_pattern;
    manifest["seed"] = cfg.seed;
    manifest["head"] = {{"hidden", classifier.head().hidden()},
                        {"labels", classifier.head().labels()},
                        {"pooling", pooling_name(classifier.pooling())}};
    manifest["train"] = to_json(cfg);
    manifest["initial_loss"] = report.initial_loss;
    manifest["final_loss"] = report.final_loss;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    write_tensor_archive(dir / "backbone.tarc", model.export_base());
    write_tensor_archive(dir / "adapter1.tarc", model.export_adapter_set(0));
    write_tensor_archive(dir / "adapter2.tarc", model.export_adapter_set(1));
    write_tensor_archive(dir / "head.tarc", {{"weight", classifier.head().weight->value},
                                             {"bias", classifier.head().bias->value}});
    write_text(dir / "loss_log.csv", loss_log_csv(report.log));
}

Phase2Checkpoint load_phase2(const fs::path& dir) {
    auto manifest = read_manifest(dir);
    if (manifest.value("phase", "") != "cls")
        throw Error(Errc::MissingCheckpoint, "'" + dir.string() + "' is not a phase-2 checkpoint");
    auto model = load_backbone_with_adapters(dir, manifest, 2);
    auto head_tensors = read_tensor_archive(dir / "head.tarc");
    if (!head_tensors.contains("weight") || !head_tensors.contains("bias"))
        throw Error(Errc::MalformedRecord, "head archive lacks weight/bias");
    auto head = ClassificationHead::from_values(head_tensors.at("weight"), head_tensors.at("bias"));
    const auto pooling = pooling_from_name(manifest["head"].value("pooling", "last_token"));
    Phase2Checkpoint out;
    out.task = task_from_name(manifest.value("task", "binary"));
    if (head.labels() != label_dimension(out.task))
        throw Error(Errc::MalformedRecord, "head width does not match the checkpoint task");
    out.classifier = std::make_unique<SequenceClassifier>(std::move(model), std::move(head), pooling);
    out.manifest = std::move(manifest);
    return out;
}

}  // namespace imm
