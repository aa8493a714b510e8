#include "prime/model.hpp"

namespace prime {

std::vector<TensorRef> Model::trainable() {
    std::vector<TensorRef> out = encoder.tensors();
    for (auto& t : proto.tensors()) out.push_back(t);
    out.push_back({"bank.free_vectors", &bank.bank, ParamGroup::FreeVectors});
    return out;
}

Model Model::zeros_like() const {
    Model g;
    g.encoder = EncoderParams::zeros(encoder.config());
    g.proto = PrototypeNetParams::zeros(proto.config());
    g.bank.bank = Matrix(bank.bank.rows, bank.bank.cols);
    g.bank.assignment = bank.assignment;
    return g;
}

Matrix embed_texts(const EncoderParams& encoder, const std::vector<TextRecord>& records,
                   unsigned threads) {
    std::vector<TokenIds> seqs(records.size());
    parallel_for(records.size(), threads,
                 [&](std::size_t i) { seqs[i] = encoder.tokenize(records[i].text); });
    return encode_forward(encoder, seqs, threads).vectors;
}

Matrix materialize_all_prototypes(const Model& model, const Corpus& corpus, unsigned threads) {
    if (corpus.num_labels() != model.num_labels())
        fail(ErrorKind::Data, "checkpoint has " + std::to_string(model.num_labels()) +
                                  " labels but the corpus has " +
                                  std::to_string(corpus.num_labels()));
    const Matrix label_emb = embed_texts(model.encoder, corpus.labels(), threads);
    return materialize_all_prototypes(model.proto, label_emb, model.centroids, model.bank, threads);
}

}  // namespace prime
