#include "hvsr/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hvsr/error.hpp"

namespace fs = std::filesystem;

namespace hvsr {

namespace {

constexpr int kFormatVersion = 1;

std::string tensor_key(size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "t%05zu", i);
    return buf;
}

std::string dims_string(const Shape& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out;
}

Shape dims_parse(const std::string& s) {
    Shape shape;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t next = s.find('x', pos);
        std::string tok = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        shape.push_back(std::stoi(tok));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return shape;
}

void write_blob(const std::string& path, const Tensor<float>& t) {
    static_assert(sizeof(float) == 4);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot write tensor blob: " + path);
    out.write(reinterpret_cast<const char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * 4));
    if (!out) throw FormatError("tensor blob write failed: " + path);
}

Tensor<float> read_blob(const std::string& path, Shape shape) {
    Tensor<float> t(std::move(shape));
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot read tensor blob: " + path);
    in.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * 4));
    if (in.gcount() != static_cast<std::streamsize>(t.v.size() * 4))
        throw FormatError("tensor blob truncated: " + path);
    char extra;
    if (in.read(&extra, 1)) throw FormatError("tensor blob has trailing bytes: " + path);
    return t;
}

}  // namespace

void save_checkpoint(const std::string& dir, const Checkpoint& ck) {
    fs::create_directories(fs::path(dir) / "tensors");
    IniDoc doc;
    IniSection& head = doc.get_or_add("checkpoint");
    head.set("version", std::to_string(kFormatVersion));
    head.set("tensor_count", std::to_string(ck.tensors.size()));
    model_config_to_ini(ck.model, doc);
    if (ck.sr) sr_fields_to_ini(ck.sr->first, ck.sr->second, doc);
    if (ck.has_state()) doc.sections.push_back(ck.state);

    IniSection& index = doc.get_or_add("tensors");
    size_t i = 0;
    for (const auto& [name, tensor] : ck.tensors) {
        std::string key = tensor_key(i++);
        index.set(key, name + " f32 " + dims_string(tensor.shape));
        write_blob((fs::path(dir) / "tensors" / (key + ".bin")).string(), tensor);
    }
    write_text_file((fs::path(dir) / "manifest.txt").string(), ini_serialize(doc));
}

Checkpoint load_checkpoint(const std::string& dir) {
    fs::path mp = fs::path(dir) / "manifest.txt";
    if (!fs::exists(mp)) throw NotFoundError("no checkpoint manifest at " + mp.string());
    IniDoc doc = ini_parse(read_text_file(mp.string()));

    const IniSection* head = doc.find("checkpoint");
    if (!head) throw FormatError("manifest missing [checkpoint] section");
    const std::string* ver = head->find("version");
    if (!ver || std::stoi(*ver) != kFormatVersion)
        throw FormatError("unsupported checkpoint format version");

    Checkpoint ck;
    ck.model = model_config_from_ini(doc);
    ck.sr = sr_fields_from_ini(doc);
    if (const IniSection* st = doc.find("state")) ck.state = *st;

    const IniSection* index = doc.find("tensors");
    if (!index) throw FormatError("manifest missing [tensors] section");
    for (const auto& [key, desc] : index->entries) {
        size_t s1 = desc.find(' ');
        size_t s2 = desc.find(' ', s1 + 1);
        if (s1 == std::string::npos || s2 == std::string::npos)
            throw FormatError("malformed tensor entry: " + desc);
        std::string name = desc.substr(0, s1);
        std::string dtype = desc.substr(s1 + 1, s2 - s1 - 1);
        if (dtype != "f32") throw FormatError("unsupported tensor dtype: " + dtype);
        Shape shape = dims_parse(desc.substr(s2 + 1));
        ck.tensors.emplace(name, read_blob((fs::path(dir) / "tensors" / (key + ".bin")).string(), shape));
    }
    const std::string* count = head->find("tensor_count");
    if (!count || std::stoul(*count) != ck.tensors.size())
        throw FormatError("tensor_count does not match the index");
    return ck;
}

}  // namespace hvsr
