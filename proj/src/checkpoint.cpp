#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "tsc/error.hpp"
#include "tsc/tscnet.hpp"

namespace tsc::net {

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

namespace {

using nlohmann::json;

json config_json(const NetConfig& c) {
    return json{{"ego_features", c.ego_features},
                {"neighbor_features", c.neighbor_features},
                {"d_e", c.d_e},
                {"d_n", c.d_n},
                {"d_t", c.d_t},
                {"d_c", c.d_c},
                {"d_u", c.d_u},
                {"M", c.M},
                {"K", c.K},
                {"delta_p", c.delta_p},
                {"action_dim", c.action_dim},
                {"stackelberg", c.stackelberg},
                {"random_priority", c.random_priority},
                {"init_std", c.init_std},
                {"hidden",
                 {{"ego_enc", c.hidden.ego_enc},
                  {"nbr_enc", c.hidden.nbr_enc},
                  {"topo_dec", c.hidden.topo_dec},
                  {"node_head", c.hidden.node_head},
                  {"ego_dec", c.hidden.ego_dec},
                  {"policy", c.hidden.policy},
                  {"predict", c.hidden.predict},
                  {"value", c.hidden.value}}}};
}

NetConfig config_from_json(const json& j) {
    NetConfig c;
    c.ego_features = j.at("ego_features").get<int>();
    c.neighbor_features = j.at("neighbor_features").get<int>();
    c.d_e = j.at("d_e").get<int>();
    c.d_n = j.at("d_n").get<int>();
    c.d_t = j.at("d_t").get<int>();
    c.d_c = j.at("d_c").get<int>();
    c.d_u = j.at("d_u").get<int>();
    c.M = j.at("M").get<int>();
    c.K = j.at("K").get<int>();
    c.delta_p = j.at("delta_p").get<double>();
    c.action_dim = j.at("action_dim").get<int>();
    c.stackelberg = j.at("stackelberg").get<bool>();
    c.random_priority = j.at("random_priority").get<bool>();
    c.init_std = j.at("init_std").get<double>();
    const json& h = j.at("hidden");
    c.hidden.ego_enc = h.at("ego_enc").get<int>();
    c.hidden.nbr_enc = h.at("nbr_enc").get<int>();
    c.hidden.topo_dec = h.at("topo_dec").get<int>();
    c.hidden.node_head = h.at("node_head").get<int>();
    c.hidden.ego_dec = h.at("ego_dec").get<int>();
    c.hidden.policy = h.at("policy").get<int>();
    c.hidden.predict = h.at("predict").get<int>();
    c.hidden.value = h.at("value").get<int>();
    c.validate();
    return c;
}

}  // namespace

void save_checkpoint(std::ostream& out, const ParamStore& params, const std::string& extra_json) {
    json arrays = json::array();
    for (const auto& v : params.layout().views)
        arrays.push_back({{"name", v.name}, {"shape", {v.rows, v.cols}}, {"offset", v.offset}});
    json header{{"format", "tsc-params"},
                {"version", kCheckpointVersion},
                {"dtype", "f64le"},
                {"config", config_json(params.config())},
                {"arrays", arrays},
                {"n_values", params.size()},
                {"target", {{"name", "value_target"}, {"offset", params.size()}, {"size", params.target().size()}}},
                {"extra", json::parse(extra_json)}};
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    out.write("TSCP", 4);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(params.values().data()),
              static_cast<std::streamsize>(params.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(params.target().data()),
              static_cast<std::streamsize>(params.target().size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

ParamStore load_checkpoint(std::istream& in, std::string* extra_json) {
    char magic[4];
    std::uint64_t len = 0;
    if (!in.read(magic, 4) || std::memcmp(magic, "TSCP", 4) != 0) throw ParseError("checkpoint: bad magic");
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 26))
        throw ParseError("checkpoint: bad header length");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError("checkpoint: truncated header");
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: header is not valid JSON: ") + e.what());
    }
    if (header.value("format", "") != "tsc-params") throw ParseError("checkpoint: unknown format");
    if (header.value("version", 0) != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(header.value("version", 0)));

    NetConfig cfg;
    try {
        cfg = config_from_json(header.at("config"));
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: bad config: ") + e.what());
    }
    ParamStore p(cfg);
    const auto& arrays = header.at("arrays");
    if (arrays.size() != p.layout().views.size()) throw ParseError("checkpoint: array list does not match config");
    for (std::size_t k = 0; k < arrays.size(); ++k) {
        const auto& v = p.layout().views[k];
        if (arrays[k].at("name").get<std::string>() != v.name || arrays[k].at("offset").get<std::size_t>() != v.offset ||
            arrays[k].at("shape").at(0).get<int>() != v.rows || arrays[k].at("shape").at(1).get<int>() != v.cols)
            throw ParseError("checkpoint: array '" + v.name + "' does not match the layout");
    }
    if (!in.read(reinterpret_cast<char*>(p.values().data()), static_cast<std::streamsize>(p.size() * sizeof(double))) ||
        !in.read(reinterpret_cast<char*>(p.target().data()),
                 static_cast<std::streamsize>(p.target().size() * sizeof(double))))
        throw ParseError("checkpoint: truncated data");
    if (!p.finite()) throw ParseError("checkpoint: non-finite parameters");
    if (extra_json) *extra_json = header.value("extra", json::object()).dump();
    return p;
}

void save_checkpoint_file(const std::string& path, const ParamStore& params, const std::string& extra_json) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    save_checkpoint(out, params, extra_json);
}

ParamStore load_checkpoint_file(const std::string& path, std::string* extra_json) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint '" + path + "'");
    return load_checkpoint(in, extra_json);
}

}  // namespace tsc::net
