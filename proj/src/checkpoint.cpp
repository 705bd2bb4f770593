#include "leakbench/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace leakbench {

namespace {

constexpr char kMagic[4] = {'L', 'B', 'C', 'K'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

struct Reader {
    const std::string& data;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > data.size()) throw DataError("checkpoint truncated");
    }
    std::uint16_t u16() {
        need(2);
        auto v = static_cast<std::uint16_t>(static_cast<std::uint8_t>(data[pos]) |
                                            (static_cast<std::uint8_t>(data[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data.substr(pos, n);
        pos += n;
        return s;
    }
};

using ParamList = std::vector<std::pair<std::string, std::vector<double>>>;

void write_checkpoint(const std::string& path, const nlohmann::json& header,
                      const ParamList& params) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, 1);
    const std::string header_text = header.dump();
    put_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out += header_text;
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, values] : params) {
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        put_u64(out, values.size());
        for (double v : values) put_f64(out, v);
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open for write: " + tmp);
        os.write(out.data(), static_cast<std::streamsize>(out.size()));
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("rename failed for " + path + ": " + ec.message());
}

nlohmann::json read_checkpoint(const std::string& path, const std::string& expected_kind,
                               ParamList& params, CheckpointMeta* metadata) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string data = ss.str();
    Reader r{data};
    if (std::memcmp(r.bytes(4).data(), kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic");
    if (r.u32() != 1) throw DataError("checkpoint: unsupported version");
    const std::uint32_t header_len = r.u32();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.bytes(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint header: ") + e.what());
    }
    if (header.value("kind", "") != expected_kind)
        throw DataError("checkpoint: expected kind " + expected_kind);
    const std::uint32_t n_params = r.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::uint16_t name_len = r.u16();
        std::string name = r.bytes(name_len);
        const std::uint64_t count = r.u64();
        std::vector<double> values(count);
        for (auto& v : values) v = r.f64();
        params.emplace_back(std::move(name), std::move(values));
    }
    if (metadata && header.contains("metadata"))
        for (const auto& [k, v] : header.at("metadata").items())
            (*metadata)[k] = v.get<std::string>();
    return header;
}

const std::vector<double>& find_param(const ParamList& params, const std::string& name) {
    for (const auto& [n, v] : params)
        if (n == name) return v;
    throw DataError("checkpoint: missing parameter " + name);
}

nlohmann::json meta_json(const CheckpointMeta& meta) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : meta) j[k] = v;
    return j;
}

}  // namespace

void save_mlp_checkpoint(const MlpModel& model, const std::string& path,
                         const CheckpointMeta& metadata) {
    nlohmann::json header;
    header["kind"] = "mlp";
    header["layer_sizes"] = model.layer_sizes;
    header["head"] = model.head == HeadKind::softmax5 ? "softmax-5" : "regression-1";
    header["dropout"] = model.dropout;
    header["metadata"] = meta_json(metadata);
    ParamList params;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        params.emplace_back("W" + std::to_string(l), model.weights[l].a);
        params.emplace_back("b" + std::to_string(l), model.biases[l]);
    }
    write_checkpoint(path, header, params);
}

MlpModel load_mlp_checkpoint(const std::string& path, CheckpointMeta* metadata) {
    ParamList params;
    const nlohmann::json header = read_checkpoint(path, "mlp", params, metadata);
    MlpModel m;
    m.layer_sizes = header.at("layer_sizes").get<std::vector<std::size_t>>();
    m.head = header.at("head").get<std::string>() == "softmax-5" ? HeadKind::softmax5
                                                                 : HeadKind::regression1;
    m.dropout = header.at("dropout").get<std::vector<double>>();
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        Mat w(m.layer_sizes[l + 1], m.layer_sizes[l]);
        const auto& wa = find_param(params, "W" + std::to_string(l));
        if (wa.size() != w.a.size()) throw DataError("checkpoint: weight size mismatch");
        w.a = wa;
        m.weights.push_back(std::move(w));
        const auto& ba = find_param(params, "b" + std::to_string(l));
        if (ba.size() != m.layer_sizes[l + 1]) throw DataError("checkpoint: bias size mismatch");
        m.biases.push_back(ba);
    }
    return m;
}

void save_lstm_checkpoint(const LstmModel& model, const std::string& path,
                          const CheckpointMeta& metadata) {
    nlohmann::json header;
    header["kind"] = "lstm";
    header["input_dim"] = model.input_dim;
    header["hidden_dim"] = model.hidden_dim;
    header["forget_bias_init"] = model.forget_bias_init;
    header["metadata"] = meta_json(metadata);
    ParamList params;
    params.emplace_back("w_input", model.w_input.a);
    params.emplace_back("w_forget", model.w_forget.a);
    params.emplace_back("w_output", model.w_output.a);
    params.emplace_back("w_cell", model.w_cell.a);
    params.emplace_back("u_input", model.u_input.a);
    params.emplace_back("u_forget", model.u_forget.a);
    params.emplace_back("u_output", model.u_output.a);
    params.emplace_back("u_cell", model.u_cell.a);
    params.emplace_back("b_input", model.b_input);
    params.emplace_back("b_forget", model.b_forget);
    params.emplace_back("b_output", model.b_output);
    params.emplace_back("b_cell", model.b_cell);
    params.emplace_back("head_weights", model.head_weights);
    params.emplace_back("head_bias", std::vector<double>{model.head_bias});
    write_checkpoint(path, header, params);
}

LstmModel load_lstm_checkpoint(const std::string& path, CheckpointMeta* metadata) {
    ParamList params;
    const nlohmann::json header = read_checkpoint(path, "lstm", params, metadata);
    LstmModel m;
    m.input_dim = header.at("input_dim").get<std::size_t>();
    m.hidden_dim = header.at("hidden_dim").get<std::size_t>();
    m.forget_bias_init = header.at("forget_bias_init").get<double>();
    const auto load_mat = [&](Mat& mat, const std::string& name, std::size_t rows,
                              std::size_t cols) {
        mat = Mat(rows, cols);
        const auto& v = find_param(params, name);
        if (v.size() != mat.a.size()) throw DataError("checkpoint: matrix size mismatch: " + name);
        mat.a = v;
    };
    load_mat(m.w_input, "w_input", m.hidden_dim, m.input_dim);
    load_mat(m.w_forget, "w_forget", m.hidden_dim, m.input_dim);
    load_mat(m.w_output, "w_output", m.hidden_dim, m.input_dim);
    load_mat(m.w_cell, "w_cell", m.hidden_dim, m.input_dim);
    load_mat(m.u_input, "u_input", m.hidden_dim, m.hidden_dim);
    load_mat(m.u_forget, "u_forget", m.hidden_dim, m.hidden_dim);
    load_mat(m.u_output, "u_output", m.hidden_dim, m.hidden_dim);
    load_mat(m.u_cell, "u_cell", m.hidden_dim, m.hidden_dim);
    m.b_input = find_param(params, "b_input");
    m.b_forget = find_param(params, "b_forget");
    m.b_output = find_param(params, "b_output");
    m.b_cell = find_param(params, "b_cell");
    m.head_weights = find_param(params, "head_weights");
    m.head_bias = find_param(params, "head_bias").at(0);
    return m;
}

void save_svr_checkpoint(const SvrModel& model, const std::string& path,
                         const CheckpointMeta& metadata) {
    nlohmann::json header;
    header["kind"] = "svr";
    header["kernel_kind"] = model.kernel.kind == KernelKind::linear       ? "linear"
                            : model.kernel.kind == KernelKind::polynomial ? "polynomial"
                                                                          : "gaussian";
    header["degree"] = model.kernel.degree;
    header["coef0"] = model.kernel.coef0;
    header["gamma"] = model.kernel.gamma;
    header["c"] = model.c;
    header["epsilon"] = model.epsilon;
    header["bias"] = model.bias;
    header["kkt_residual"] = model.kkt_residual;
    header["converged"] = model.converged;
    header["n_sv"] = model.support_vectors.size();
    header["dim"] = model.support_vectors.empty() ? 0 : model.support_vectors.front().size();
    header["metadata"] = meta_json(metadata);
    ParamList params;
    std::vector<double> flat;
    for (const auto& sv : model.support_vectors) flat.insert(flat.end(), sv.begin(), sv.end());
    params.emplace_back("support_vectors", std::move(flat));
    params.emplace_back("dual_coefficients", model.dual_coefficients);
    write_checkpoint(path, header, params);
}

SvrModel load_svr_checkpoint(const std::string& path, CheckpointMeta* metadata) {
    ParamList params;
    const nlohmann::json header = read_checkpoint(path, "svr", params, metadata);
    SvrModel m;
    const std::string kind = header.at("kernel_kind").get<std::string>();
    m.kernel.kind = kind == "linear"       ? KernelKind::linear
                    : kind == "polynomial" ? KernelKind::polynomial
                                           : KernelKind::gaussian;
    m.kernel.degree = header.at("degree").get<int>();
    m.kernel.coef0 = header.at("coef0").get<double>();
    m.kernel.gamma = header.at("gamma").get<double>();
    m.c = header.at("c").get<double>();
    m.epsilon = header.at("epsilon").get<double>();
    m.bias = header.at("bias").get<double>();
    m.kkt_residual = header.at("kkt_residual").get<double>();
    m.converged = header.at("converged").get<bool>();
    const std::size_t n_sv = header.at("n_sv").get<std::size_t>();
    const std::size_t dim = header.at("dim").get<std::size_t>();
    const auto& flat = find_param(params, "support_vectors");
    if (flat.size() != n_sv * dim) throw DataError("checkpoint: support vector payload mismatch");
    for (std::size_t i = 0; i < n_sv; ++i)
        m.support_vectors.emplace_back(flat.begin() + static_cast<long>(i * dim),
                                       flat.begin() + static_cast<long>((i + 1) * dim));
    m.dual_coefficients = find_param(params, "dual_coefficients");
    if (m.dual_coefficients.size() != n_sv)
        throw DataError("checkpoint: coefficient count mismatch");
    return m;
}

}  // namespace leakbench
