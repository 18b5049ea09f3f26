#include "radreport/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "json.hpp"
#include "radreport/corpus.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace radreport {

using njson = nlohmann::ordered_json;

namespace {

njson config_to_json(const ModelConfig& c) {
    return njson{{"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
                 {"hidden_dim", c.hidden_dim}, {"n_layers", c.n_layers},
                 {"n_heads", c.n_heads},       {"ff_dim", c.ff_dim},
                 {"dropout_rate", c.dropout_rate}, {"seed", c.seed}};
}

ModelConfig config_from_json(const njson& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int32_t>();
    c.max_seq_len = j.at("max_seq_len").get<int32_t>();
    c.hidden_dim = j.at("hidden_dim").get<int32_t>();
    c.n_layers = j.at("n_layers").get<int32_t>();
    c.n_heads = j.at("n_heads").get<int32_t>();
    c.ff_dim = j.at("ff_dim").get<int32_t>();
    c.dropout_rate = j.at("dropout_rate").get<float>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, Model<float>& model, uint64_t vocab_hash,
                     const std::string& note) {
    auto params = model.named_params();

    njson header;
    header["format"] = "radreport-checkpoint";
    header["version"] = 1;
    header["dtype"] = "f32le";
    header["config"] = config_to_json(model.config);
    njson heads;
    heads["mlm"] = model.mlm.has_value();
    heads["aux"] = model.aux.has_value();
    if (model.head) {
        heads["classifier"] = njson{{"feature_dim", model.head->feature_dim()},
                                    {"n_classes", model.head->n_classes()}};
    } else {
        heads["classifier"] = nullptr;
    }
    header["heads"] = std::move(heads);
    header["vocab_hash"] = hash_hex(vocab_hash);
    header["created_by"] = kCodeVersion;
    header["note"] = note;
    njson tensors = njson::array();
    for (const auto& p : params) {
        tensors.push_back(njson{{"name", p.name}, {"shape", p.value->shape}});
    }
    header["tensors"] = std::move(tensors);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << header.dump() << '\n';
    for (const auto& p : params) {
        out.write(reinterpret_cast<const char*>(p.value->data()),
                  static_cast<std::streamsize>(p.value->numel() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

Model<float> load_checkpoint(const std::string& path, CheckpointInfo* info) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) {
        throw std::runtime_error("checkpoint has no header: " + path);
    }
    njson header;
    try {
        header = njson::parse(header_line);
    } catch (const std::exception& e) {
        throw std::runtime_error("invalid checkpoint header in " + path + ": " + e.what());
    }
    if (header.at("format") != "radreport-checkpoint" || header.at("version") != 1) {
        throw std::runtime_error("unsupported checkpoint format in " + path);
    }

    Model<float> model;
    model.config = config_from_json(header.at("config"));
    model.config.validate();

    // Rebuild the parameter layout from the head flags; tensor shapes come
    // from the header table.
    model.encoder.layers.resize(static_cast<size_t>(model.config.n_layers));
    const auto& heads = header.at("heads");
    if (heads.at("mlm").get<bool>()) model.mlm = MlmHeadParams<float>{};
    if (heads.at("aux").get<bool>()) model.aux = AuxEncoderParams<float>{};
    if (!heads.at("classifier").is_null()) model.head = ClassifierHead<float>{};

    auto params = model.named_params();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size()) {
        throw std::runtime_error("checkpoint tensor table does not match the model layout");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& t = tensors.at(i);
        if (t.at("name").get<std::string>() != params[i].name) {
            throw std::runtime_error("unexpected tensor " + t.at("name").get<std::string>() +
                                     " (wanted " + params[i].name + ")");
        }
        params[i].value->resize(t.at("shape").get<std::vector<int64_t>>());
        in.read(reinterpret_cast<char*>(params[i].value->data()),
                static_cast<std::streamsize>(params[i].value->numel() * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint truncated at " + params[i].name);
    }

    if (info) {
        info->vocab_hash =
            std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
        info->note = header.value("note", "");
    }
    return model;
}

}  // namespace radreport
