import init, { train_matrix, mixer_probe, kl_to_standard } from "./pkg/lsfsac_demo.js";

const $ = (id) => document.getElementById(id);

function guard(out, f) {
  try {
    out.textContent = f();
  } catch (e) {
    out.textContent = "error: " + (e.message || e);
  }
}

await init();

$("train").onclick = () => {
  $("table").textContent = "training...";
  // let the message paint before the blocking call
  setTimeout(() => guard($("table"), () => {
    const r = JSON.parse(train_matrix(BigInt($("seed").value), Number($("steps").value)));
    return r.text + `\ngreedy success rate: ${r.success_rate}`;
  }), 20);
};

$("probe").onclick = () => guard($("probe-out"), () => {
  const r = JSON.parse(mixer_probe(BigInt($("seed").value), Number($("agents").value), Number($("probes").value)));
  return `${r.violations} violations over ${r.probes} probes; smallest change ${r.min_change.toFixed(6)}`;
});

$("kl").onclick = () => guard($("kl-out"), () => `KL = ${kl_to_standard($("mu").value, $("var").value).toFixed(6)} nats`);
