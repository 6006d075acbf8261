if (cache == null) {window.__selfheal&&window.__selfheal.activation("ObjectCreator","CannotSetPropertyOfNull|entries|https://object-creator-04.example/app.js|1|0");}if (cache == null) {cache = {};} cache.entries = [];
console.log('cached');
