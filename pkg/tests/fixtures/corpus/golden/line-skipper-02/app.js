var widget = {};
if (typeof widget.render === 'function') {widget.render();} else {window.__selfheal&&window.__selfheal.activation("LineSkipper","NotAFunction|widget.render|https://line-skipper-02.example/app.js|2|0");}
console.log('rendered');
