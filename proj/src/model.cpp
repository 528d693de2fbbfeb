#include "tact/model.hpp"

#include <json.hpp>

using nlohmann::json;
using nlohmann::ordered_json;

namespace tact::model {

std::string to_string(FlowBackbone b) {
    switch (b) {
        case FlowBackbone::NaiveCNN: return "naive_cnn";
        case FlowBackbone::CNNStar: return "cnn_star";
        case FlowBackbone::ResidualCNN: return "residual_cnn";
    }
    return "naive_cnn";
}

std::string to_string(ClassifierKind c) {
    return c == ClassifierKind::DirectHead ? "direct_head" : "transformer";
}

FlowBackbone backbone_from_string(const std::string& s) {
    if (s == "naive_cnn") return FlowBackbone::NaiveCNN;
    if (s == "cnn_star") return FlowBackbone::CNNStar;
    if (s == "residual_cnn") return FlowBackbone::ResidualCNN;
    throw format_error("model config: unknown flow backbone '" + s + "'");
}

ClassifierKind classifier_from_string(const std::string& s) {
    if (s == "direct_head") return ClassifierKind::DirectHead;
    if (s == "transformer") return ClassifierKind::Transformer;
    throw format_error("model config: unknown classifier '" + s + "'");
}

std::string ModelConfig::to_json() const {
    ordered_json j;
    j["input_mask"] = {{"s1_flow", input_mask.s1_flow},
                       {"s2_flow", input_mask.s2_flow},
                       {"flow_angles", input_mask.flow_angles},
                       {"wrench", input_mask.wrench},
                       {"joints", input_mask.joints}};
    j["flow_backbone"] = to_string(flow_backbone);
    j["classifier"] = to_string(classifier);
    j["d_model"] = d_model;
    j["nhead"] = nhead;
    j["num_layers"] = num_layers;
    j["d_ff"] = d_ff;
    j["flow_feature_dim"] = flow_feature_dim;
    j["wrench_feature_dim"] = wrench_feature_dim;
    j["joint_feature_dim"] = joint_feature_dim;
    j["mlp_hidden"] = mlp_hidden;
    j["head_hidden"] = head_hidden;
    j["num_classes"] = num_classes;
    j["sequence_length"] = sequence_length;
    j["pooled_h"] = pooled_h;
    j["pooled_w"] = pooled_w;
    j["cnn_channels"] = cnn_channels;
    j["dropout_p"] = dropout_p;
    j["init_seed"] = init_seed;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw format_error(std::string("model config: invalid JSON: ") + e.what());
    }
    ModelConfig c;
    try {
        if (j.contains("input_mask")) {
            const auto& m = j["input_mask"];
            if (m.contains("s1_flow")) c.input_mask.s1_flow = m["s1_flow"];
            if (m.contains("s2_flow")) c.input_mask.s2_flow = m["s2_flow"];
            if (m.contains("flow_angles")) c.input_mask.flow_angles = m["flow_angles"];
            if (m.contains("wrench")) c.input_mask.wrench = m["wrench"];
            if (m.contains("joints")) c.input_mask.joints = m["joints"];
        }
        if (j.contains("flow_backbone")) c.flow_backbone = backbone_from_string(j["flow_backbone"]);
        if (j.contains("classifier")) c.classifier = classifier_from_string(j["classifier"]);
        if (j.contains("d_model")) c.d_model = j["d_model"];
        if (j.contains("nhead")) c.nhead = j["nhead"];
        if (j.contains("num_layers")) c.num_layers = j["num_layers"];
        if (j.contains("d_ff")) c.d_ff = j["d_ff"];
        if (j.contains("flow_feature_dim")) c.flow_feature_dim = j["flow_feature_dim"];
        if (j.contains("wrench_feature_dim")) c.wrench_feature_dim = j["wrench_feature_dim"];
        if (j.contains("joint_feature_dim")) c.joint_feature_dim = j["joint_feature_dim"];
        if (j.contains("mlp_hidden")) c.mlp_hidden = j["mlp_hidden"];
        if (j.contains("head_hidden")) c.head_hidden = j["head_hidden"];
        if (j.contains("num_classes")) c.num_classes = j["num_classes"];
        if (j.contains("sequence_length")) c.sequence_length = j["sequence_length"];
        if (j.contains("pooled_h")) c.pooled_h = j["pooled_h"];
        if (j.contains("pooled_w")) c.pooled_w = j["pooled_w"];
        if (j.contains("cnn_channels")) c.cnn_channels = j["cnn_channels"];
        if (j.contains("dropout_p")) c.dropout_p = j["dropout_p"];
        if (j.contains("init_seed")) c.init_seed = j["init_seed"];
    } catch (const json::exception& e) {
        throw format_error(std::string("model config: bad field type: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace tact::model
