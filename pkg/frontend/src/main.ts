import { ChatUi } from "./ui.js";

const mount = document.getElementById("app");
if (mount === null) {
  throw new Error("missing #app mount point");
}
new ChatUi(mount);
