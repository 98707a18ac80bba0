#include "metaptq/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace metaptq {

namespace {

constexpr const char* kMagic = "METAPTQ-CKPT";
constexpr int kVersion = 1;

void write_double_le(std::ostream& out, double d) {
    uint64_t bits = std::bit_cast<uint64_t>(d);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(buf, 8);
}

double read_double_le(std::istream& in) {
    char buf[8];
    in.read(buf, 8);
    if (in.gcount() != 8) throw IoError("checkpoint: truncated payload");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::string& path, uint64_t config_hash,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << kMagic << " v" << kVersion << "\n";
    out << "config_hash " << std::hex << config_hash << std::dec << "\n";
    out << "tensors " << tensors.size() << "\n";
    for (const auto& [name, t] : tensors) {
        if (name.find(' ') != std::string::npos || name.find('\n') != std::string::npos) {
            throw IoError("checkpoint: tensor name '" + name + "' contains whitespace");
        }
        out << "tensor " << name << " shape";
        for (int64_t d : t.shape()) out << " " << d;
        out << " count " << t.numel() << "\n";
    }
    out << "payload\n";
    for (const auto& [name, t] : tensors) {
        (void)name;
        for (double d : t.values()) write_double_le(out, d);
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::string line;

    if (!std::getline(in, line)) throw IoError("checkpoint: empty file");
    {
        std::istringstream ss(line);
        std::string magic, version;
        ss >> magic >> version;
        if (magic != kMagic) throw IoError("checkpoint: bad magic '" + magic + "'");
        if (version != "v" + std::to_string(kVersion)) {
            throw IoError("checkpoint: unsupported version '" + version + "'");
        }
    }

    CheckpointData data;
    if (!std::getline(in, line)) throw IoError("checkpoint: missing config hash");
    {
        std::istringstream ss(line);
        std::string key;
        ss >> key >> std::hex >> data.config_hash;
        if (key != "config_hash" || ss.fail()) throw IoError("checkpoint: malformed config hash line");
    }

    size_t count = 0;
    if (!std::getline(in, line)) throw IoError("checkpoint: missing tensor count");
    {
        std::istringstream ss(line);
        std::string key;
        ss >> key >> count;
        if (key != "tensors" || ss.fail()) throw IoError("checkpoint: malformed tensor count line");
    }

    for (size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw IoError("checkpoint: truncated header");
        std::istringstream ss(line);
        std::string key, name, word;
        ss >> key >> name >> word;
        if (key != "tensor" || word != "shape") throw IoError("checkpoint: malformed tensor line");
        CheckpointEntry e;
        e.name = name;
        int64_t expected = -1;
        while (ss >> word) {
            if (word == "count") {
                ss >> expected;
                break;
            }
            e.shape.push_back(std::stoll(word));
        }
        int64_t numel = shape_numel(e.shape);
        if (expected != numel) throw IoError("checkpoint: shape/count mismatch for '" + name + "'");
        e.values.reserve(numel);
        data.entries.push_back(std::move(e));
    }

    if (!std::getline(in, line) || line != "payload") {
        throw IoError("checkpoint: missing payload marker");
    }
    for (auto& e : data.entries) {
        for (int64_t i = 0; i < shape_numel(e.shape); ++i) e.values.push_back(read_double_le(in));
    }
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0) throw IoError("checkpoint: trailing bytes after payload");
    return data;
}

void load_checkpoint(const std::string& path, uint64_t expected_hash,
                     const std::vector<std::pair<std::string, Tensor>>& tensors) {
    CheckpointData data = read_checkpoint(path);
    if (expected_hash != 0 && data.config_hash != expected_hash) {
        throw IoError("checkpoint: config hash mismatch");
    }
    std::unordered_map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : data.entries) by_name[e.name] = &e;
    for (const auto& [name, t] : tensors) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
        if (!shape_equal(it->second->shape, t.shape())) {
            throw IoError("checkpoint: shape mismatch for '" + name + "' (file " +
                          shape_str(it->second->shape) + ", target " + shape_str(t.shape()) + ")");
        }
        Tensor target = t;
        target.set_values(it->second->values);
    }
}

}  // namespace metaptq
