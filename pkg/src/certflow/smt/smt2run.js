// Minimal SMT-LIB2 runner over the z3 WASM build: reads a .smt2 file,
// prints solver output to stdout.
const { init } = require('z3-solver');
const fs = require('fs');

(async () => {
  const file = process.argv[2];
  const script = fs.readFileSync(file, 'utf8');
  const { Z3, em } = await init();
  const cfg = Z3.mk_config();
  const ctx = Z3.mk_context(cfg);
  try {
    const out = await Z3.eval_smtlib2_string(ctx, script);
    process.stdout.write(out);
  } catch (e) {
    process.stderr.write(String(e));
    process.exitCode = 1;
  }
  em.PThread.terminateAllThreads();
  process.exit();
})();
