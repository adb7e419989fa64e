#include "tda/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "tda/config_json.hpp"

#include <nlohmann/json.hpp>

namespace tda {

namespace {

void write_f32(std::ofstream& out, const float* p, std::size_t n) {
    // x86 is little-endian; the format is defined as LE on all hosts
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
}

void read_f32(std::ifstream& in, float* p, std::size_t n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 4));
    if (!in) throw std::runtime_error("checkpoint: truncated payload");
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const AdamW& opt, int step,
                     const std::string& note, const std::string& rng_state) {
    nlohmann::json header;
    header["format"] = "tda-checkpoint-v1";
    header["config"] = model_config_to_json(model.cfg);
    header["step"] = step;
    header["note"] = note;
    header["rng_state"] = rng_state;
    header["opt_step"] = opt.step;

    nlohmann::json arrays = nlohmann::json::array();
    std::size_t offset = 0;
    auto manifest = [&](const std::string& name, const std::vector<std::int64_t>& shape,
                        std::size_t count) {
        nlohmann::json a;
        a["name"] = name;
        a["offset"] = offset;  // in float32 elements from payload start
        a["shape"] = shape;
        arrays.push_back(a);
        offset += count;
    };
    for (const auto& e : model.params.entries) manifest(e.name, e.shape, e.count);
    const std::int64_t n = static_cast<std::int64_t>(model.params.w.size());
    manifest("opt.m", {n}, model.params.w.size());
    manifest("opt.v", {n}, model.params.w.size());
    header["arrays"] = arrays;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    const std::string h = header.dump();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.put('\n');
    write_f32(out, model.params.w.data(), model.params.w.size());
    write_f32(out, opt.m.data(), opt.m.size());
    write_f32(out, opt.v.data(), opt.v.size());
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string hline;
    if (!std::getline(in, hline)) throw std::runtime_error("checkpoint: missing header");
    nlohmann::json header = nlohmann::json::parse(hline);
    if (header.value("format", "") != "tda-checkpoint-v1")
        throw std::runtime_error("checkpoint: unknown format");

    Checkpoint ck;
    ck.config = model_config_from_json(header.at("config"));
    ck.step = header.value("step", 0);
    ck.note = header.value("note", "");
    ck.rng_state = header.value("rng_state", "");
    ck.model = Model::build(ck.config);

    // The manifest drives reads so reordered entries still land correctly.
    const auto& arrays = header.at("arrays");
    const std::size_t payload_start = static_cast<std::size_t>(in.tellg());
    auto read_named = [&](const std::string& name, float* dst, std::size_t count) {
        for (const auto& a : arrays)
            if (a.at("name").get<std::string>() == name) {
                const std::size_t off = a.at("offset").get<std::size_t>();
                in.seekg(static_cast<std::streamoff>(payload_start + off * 4));
                read_f32(in, dst, count);
                return;
            }
        throw std::runtime_error("checkpoint: missing array " + name);
    };
    for (const auto& e : ck.model.params.entries)
        read_named(e.name, ck.model.params.w.data() + e.offset, e.count);
    ck.opt.init(ck.model.params.w.size());
    ck.opt.step = header.value("opt_step", std::int64_t(0));
    read_named("opt.m", ck.opt.m.data(), ck.opt.m.size());
    read_named("opt.v", ck.opt.v.data(), ck.opt.v.size());
    return ck;
}

}  // namespace tda
