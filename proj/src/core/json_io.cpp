#include "stormdispatch/core/json_io.hpp"

#include <fstream>
#include <sstream>

#include "stormdispatch/core/error.hpp"

namespace stormdispatch {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + path + "'");
    out << text;
    require(static_cast<bool>(out), ErrorCode::Io, "write failed for '" + path + "'");
}

nlohmann::json parse_json(const std::string& text, const std::string& origin) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        for (std::size_t i = 0; i + 1 < upto; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        fail(ErrorCode::Parse, origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
    }
}

nlohmann::json read_json_file(const std::string& path) { return parse_json(read_text_file(path), path); }

std::string dump_canonical(const nlohmann::json& doc) { return doc.dump(2) + "\n"; }

}  // namespace stormdispatch
